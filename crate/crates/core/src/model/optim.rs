use std::collections::BTreeMap;

use crate::error::Result;
use crate::Matrix;

use super::{ModelParams, ParamId};

/// Gradient descent with optional heavy-ball momentum and coupled weight decay.
///
/// Per step: `g += wd * p`, `v = mu * v + g`, `p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<ParamId, Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: BTreeMap::new() }
    }

    /// Applies one update for every `(id, gradient)` pair.
    pub fn step<'a>(
        &mut self,
        params: &mut ModelParams,
        grads: impl IntoIterator<Item = (ParamId, &'a Matrix)>,
    ) -> Result<()> {
        for (id, g) in grads {
            let p = params.param_mut(id);
            let mut g = g.clone();
            if self.weight_decay != 0.0 {
                g.axpy(self.weight_decay, p)?;
            }
            let step = if self.momentum != 0.0 {
                let v = self.velocity.entry(id).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                *v = v.scale(self.momentum);
                v.axpy(1.0, &g)?;
                v.clone()
            } else {
                g
            };
            p.axpy(-self.lr, &step)?;
        }
        Ok(())
    }
}
