use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Var};
use crate::{Matrix, Tape};

use super::{Activation, Model, ModelParams, NormState, ParamId};

/// Which statistics the batch-standardisation layers use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; needs at least two rows.
    Train,
    /// Running statistics; rows are processed independently.
    Eval,
}

/// Parameter handles of one model recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeModel {
    vars: BTreeMap<ParamId, Var>,
}

impl TapeModel {
    /// Records every parameter; those for which `trainable` holds become
    /// differentiable leaves, the rest constants.
    pub fn register(tape: &mut Tape, params: &ModelParams, trainable: impl Fn(ParamId) -> bool) -> Self {
        let vars = params
            .iter()
            .map(|(id, m)| {
                let v = if trainable(id) { tape.param(m.clone()) } else { tape.constant(m.clone()) };
                (id, v)
            })
            .collect();
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[&id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars.iter().map(|(&id, &v)| (id, v))
    }
}

pub struct ForwardVars {
    /// Features, B x L.
    pub h: Var,
    /// Logits, B x K.
    pub z: Var,
    pub log_p: Var,
    /// Batch statistics per layer in train mode; empty in eval mode.
    pub stats: Vec<BatchStats<f64>>,
}

/// Records the forward pass of `model` on `x`.
pub fn forward_on_tape(tape: &mut Tape, tm: &TapeModel, model: &Model, x: Var, mode: Mode) -> Result<ForwardVars> {
    let (b, d) = tape.shape(x);
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if d != model.params.input_dim() {
        return Err(Error::Shape { op: "forward", left: (b, d), right: model.params.layers()[0].weight.shape() });
    }
    if mode == Mode::Train && b < 2 {
        return Err(Error::invalid(
            "train-mode forward needs a batch of at least 2 (use eval statistics for single samples)",
        ));
    }
    let norm = &model.norm;
    let mut a = x;
    let mut stats = Vec::new();
    for (i, layer) in model.params.layers().iter().enumerate() {
        let wt = tape.transpose(tm.var(ParamId::Weight(i)));
        let pre = tape.matmul(a, wt)?;
        let s = match mode {
            Mode::Train => {
                let (s, st) = tape.batch_standardize(pre, norm.eps)?;
                stats.push(st);
                s
            }
            Mode::Eval => {
                let rs = &norm.layers[i];
                let neg_mean = tape.constant(Matrix::row_vector(&rs.mean.iter().map(|m| -m).collect::<Vec<_>>()));
                let inv_std = tape.constant(Matrix::row_vector(
                    &rs.var.iter().map(|v| 1.0 / (v + norm.eps).sqrt()).collect::<Vec<_>>(),
                ));
                let c = tape.add_row(pre, neg_mean)?;
                tape.mul_row(c, inv_std)?
            }
        };
        let scaled = tape.mul_row(s, tm.var(ParamId::Gamma(i)))?;
        let shifted = tape.add_row(scaled, tm.var(ParamId::Beta(i)))?;
        a = match layer.activation {
            Activation::Relu => tape.relu(shifted),
            Activation::Identity => shifted,
        };
    }
    let wt = tape.transpose(tm.var(ParamId::Classifier));
    let z = tape.matmul(a, wt)?;
    let log_p = tape.log_softmax_rows(z);
    Ok(ForwardVars { h: a, z, log_p, stats })
}

/// Plain values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut {
    pub h: Matrix,
    pub z: Matrix,
    pub p: Matrix,
}

impl NormState {
    /// Momentum update of the running statistics with unbiased batch variance.
    pub fn update(&mut self, stats: &[BatchStats<f64>], batch: usize) {
        let m = self.momentum;
        let correction = batch as f64 / (batch as f64 - 1.0);
        for (rs, st) in self.layers.iter_mut().zip(stats) {
            for (r, &b) in rs.mean.iter_mut().zip(&st.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in rs.var.iter_mut().zip(&st.var) {
                *r = (1.0 - m) * *r + m * b * correction;
            }
        }
    }
}

impl Model {
    fn run(&self, x: &Matrix, mode: Mode) -> Result<(ForwardOut, Vec<BatchStats<f64>>)> {
        let mut tape = Tape::new();
        let tm = TapeModel::register(&mut tape, &self.params, |_| false);
        let xv = tape.constant(x.clone());
        let f = forward_on_tape(&mut tape, &tm, self, xv, mode)?;
        let p = tape.value(f.log_p).map(f64::exp);
        Ok((ForwardOut { h: tape.value(f.h).clone(), z: tape.value(f.z).clone(), p }, f.stats))
    }

    /// Forward pass; train mode uses batch statistics and folds them into
    /// the running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<ForwardOut> {
        let (out, stats) = self.run(x, mode)?;
        if mode == Mode::Train {
            self.norm.update(&stats, x.rows());
        }
        Ok(out)
    }

    /// Eval-mode forward; never touches state.
    pub fn predict(&self, x: &Matrix) -> Result<ForwardOut> {
        Ok(self.run(x, Mode::Eval)?.0)
    }

    /// Batch-statistics forward that leaves the running statistics alone.
    pub fn forward_batch_stats(&self, x: &Matrix) -> Result<ForwardOut> {
        Ok(self.run(x, Mode::Train)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::tensor::Rng;

    fn model(seed: u64) -> Model {
        Model::init(&Architecture::reference(5, 3), seed).unwrap()
    }

    fn batch(rng: &mut Rng, b: usize) -> Matrix {
        Matrix::from_fn(b, 5, |_, _| rng.normal())
    }

    #[test]
    fn zero_classifier_gives_uniform_probabilities() {
        let mut m = model(1);
        *m.params.param_mut(ParamId::Classifier) = Matrix::zeros(3, 32);
        let out = m.predict(&batch(&mut Rng::new(0), 4)).unwrap();
        assert!(out.z.data().iter().all(|&z| z == 0.0));
        assert!(out.p.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn eval_rows_are_batch_independent() {
        let m = model(2);
        let x = batch(&mut Rng::new(1), 8);
        let full = m.predict(&x).unwrap();
        for i in 0..8 {
            let one = m.predict(&x.select_rows(&[i])).unwrap();
            assert_eq!(one.z.row(0), full.z.row(i));
            assert_eq!(one.h.row(0), full.h.row(i));
        }
    }

    #[test]
    fn logits_match_naive_dot_products() {
        let mut rng = Rng::new(3);
        let mut m = model(3);
        for layer in 0..2 {
            for v in m.params.param_mut(ParamId::Gamma(layer)).data_mut() {
                *v = rng.uniform_range(0.5, 1.5);
            }
            for v in m.params.param_mut(ParamId::Beta(layer)).data_mut() {
                *v = rng.normal();
            }
        }
        let x = batch(&mut rng, 6);
        let out = m.forward_batch_stats(&x).unwrap();
        let w = m.params.classifier();
        for i in 0..6 {
            for k in 0..3 {
                let naive: f64 = (0..32).map(|j| out.h[(i, j)] * w[(k, j)]).sum();
                assert!((out.z[(i, k)] - naive).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn doubling_omega_doubles_logits() {
        let m = model(4);
        let x = batch(&mut Rng::new(4), 5);
        let a = m.predict(&x).unwrap();
        let mut m2 = m.clone();
        let w2 = m2.params.classifier().scale(2.0);
        *m2.params.param_mut(ParamId::Classifier) = w2;
        let b = m2.predict(&x).unwrap();
        for (za, zb) in a.z.data().iter().zip(b.z.data()) {
            assert_eq!(2.0 * za, *zb);
        }
        for i in 0..5 {
            assert_eq!(crate::tensor::ops::argmax(a.p.row(i)), crate::tensor::ops::argmax(b.p.row(i)));
        }
    }

    #[test]
    fn train_mode_rejects_single_sample_and_updates_stats() {
        let mut m = model(5);
        let mut rng = Rng::new(5);
        assert!(m.forward(&batch(&mut rng, 1), Mode::Train).is_err());
        let before = m.norm.clone();
        m.forward(&batch(&mut rng, 4), Mode::Train).unwrap();
        assert_ne!(before, m.norm);
        let after = m.norm.clone();
        m.forward(&batch(&mut rng, 4), Mode::Eval).unwrap();
        assert_eq!(after, m.norm);
    }

    #[test]
    fn running_update_uses_unbiased_variance() {
        let m = model(6);
        let mut norm = m.norm.clone();
        let stats = vec![BatchStats { mean: vec![1.0; 32], var: vec![3.0; 32] }; 2];
        norm.update(&stats, 4);
        assert!((norm.layers[0].mean[0] - 0.1).abs() < 1e-15);
        assert!((norm.layers[0].var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let m = model(7);
        assert!(matches!(m.predict(&Matrix::zeros(2, 4)), Err(Error::Shape { op: "forward", .. })));
    }
}
