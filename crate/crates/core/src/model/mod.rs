//! MLP feature extractor with batch standardisation and a bias-free linear head.
//!
//! Each extractor layer computes `act(gamma * standardize(x W^T) + beta)`;
//! the classifier computes `z = h omega^T` and `p = softmax(z)`.

mod checkpoint;
mod forward;
mod optim;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::Matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward_on_tape, ForwardOut, ForwardVars, Mode, TapeModel};
pub use optim::Sgd;
pub use train::{train_to_tpt, write_trace_csv, EpochRecord, TrainConfig, TrainTrace};

/// Batch-standardisation epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum.
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::invalid(format!("unknown activation {s:?}; expected relu or identity"))),
        }
    }
}

/// Names one trainable tensor of a [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Weight(usize),
    Gamma(usize),
    Beta(usize),
    Classifier,
}

impl ParamId {
    pub fn is_affine(self) -> bool {
        matches!(self, ParamId::Gamma(_) | ParamId::Beta(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// out x in.
    pub weight: Matrix,
    /// 1 x out.
    pub gamma: Matrix,
    /// 1 x out.
    pub beta: Matrix,
    pub activation: Activation,
}

/// Layer widths and activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Output width of every extractor layer; the last one is the feature dim L.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// Activation after the last extractor layer. Hidden layers use relu.
    pub final_activation: Activation,
}

impl Architecture {
    /// Two hidden layers of width 32 with linear features.
    pub fn reference(input_dim: usize, num_classes: usize) -> Self {
        Self { input_dim, hidden: vec![32, 32], num_classes, final_activation: Activation::Identity }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    classifier: Matrix,
}

impl ModelParams {
    /// Checks that layer shapes chain and every entry is finite.
    pub fn new(layers: Vec<Layer>, classifier: Matrix) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("extractor needs at least one layer"));
        }
        let mut width = layers[0].weight.cols();
        for (i, l) in layers.iter().enumerate() {
            let out = l.weight.rows();
            if l.weight.cols() != width {
                return Err(Error::invalid(format!(
                    "layer {i} expects input width {}, previous layer gives {width}",
                    l.weight.cols()
                )));
            }
            if l.gamma.shape() != (1, out) || l.beta.shape() != (1, out) {
                return Err(Error::invalid(format!(
                    "layer {i} affine shapes {:?}/{:?} do not match width {out}",
                    l.gamma.shape(),
                    l.beta.shape()
                )));
            }
            width = out;
        }
        if classifier.cols() != width || classifier.rows() < 2 {
            return Err(Error::invalid(format!(
                "classifier {:?} does not fit feature width {width}",
                classifier.shape()
            )));
        }
        let p = Self { layers, classifier };
        if !p.iter().all(|(_, m)| m.all_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(p)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, gamma = 1, beta = 0.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.hidden.is_empty() || arch.hidden.contains(&0) || arch.input_dim == 0 {
            return Err(Error::invalid(format!("invalid architecture {arch:?}")));
        }
        if arch.num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let mut rng = Rng::derive(seed, 0x696e_6974);
        let mut uniform = |rows: usize, cols: usize| {
            let b = 1.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-b, b))
        };
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input_dim;
        for (i, &out) in arch.hidden.iter().enumerate() {
            let last = i + 1 == arch.hidden.len();
            layers.push(Layer {
                weight: uniform(out, width),
                gamma: Matrix::filled(1, out, 1.0),
                beta: Matrix::zeros(1, out),
                activation: if last { arch.final_activation } else { Activation::Relu },
            });
            width = out;
        }
        let classifier = uniform(arch.num_classes, width);
        Self::new(layers, classifier)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// omega, K x L.
    pub fn classifier(&self) -> &Matrix {
        &self.classifier
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.rows()
    }

    pub fn param(&self, id: ParamId) -> &Matrix {
        match id {
            ParamId::Weight(i) => &self.layers[i].weight,
            ParamId::Gamma(i) => &self.layers[i].gamma,
            ParamId::Beta(i) => &self.layers[i].beta,
            ParamId::Classifier => &self.classifier,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Matrix {
        match id {
            ParamId::Weight(i) => &mut self.layers[i].weight,
            ParamId::Gamma(i) => &mut self.layers[i].gamma,
            ParamId::Beta(i) => &mut self.layers[i].beta,
            ParamId::Classifier => &mut self.classifier,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(3 * self.layers.len() + 1);
        for i in 0..self.layers.len() {
            ids.extend([ParamId::Weight(i), ParamId::Gamma(i), ParamId::Beta(i)]);
        }
        ids.push(ParamId::Classifier);
        ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.param_ids().into_iter().map(move |id| (id, self.param(id)))
    }

    /// Copy of every parameter, keyed by id.
    pub fn snapshot(&self) -> BTreeMap<ParamId, Matrix> {
        self.iter().map(|(id, m)| (id, m.clone())).collect()
    }
}

/// Running mean and variance of one batch-standardisation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub layers: Vec<RunningStats>,
    pub momentum: f64,
    pub eps: f64,
}

impl NormState {
    /// Zero means and unit variances for every layer of `params`.
    pub fn fresh(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers()
                .iter()
                .map(|l| RunningStats { mean: vec![0.0; l.weight.rows()], var: vec![1.0; l.weight.rows()] })
                .collect(),
            momentum: NORM_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.layers.len() != params.layers().len() {
            return Err(Error::invalid(format!(
                "{} norm layers for {} extractor layers",
                self.layers.len(),
                params.layers().len()
            )));
        }
        for (i, (s, l)) in self.layers.iter().zip(params.layers()).enumerate() {
            let w = l.weight.rows();
            if s.mean.len() != w || s.var.len() != w {
                return Err(Error::invalid(format!("norm layer {i} has wrong width")));
            }
            if s.var.iter().any(|&v| !(v > 0.0 && v.is_finite())) || s.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("norm layer {i} has non-positive or non-finite statistics")));
            }
        }
        if !(self.eps > 0.0) || !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::invalid("norm eps must be > 0 and momentum in [0, 1]"));
        }
        Ok(())
    }
}

/// Parameters plus running statistics: everything needed to run the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub norm: NormState,
}

impl Model {
    pub fn new(params: ModelParams, norm: NormState) -> Result<Self> {
        norm.validate(&params)?;
        Ok(Self { params, norm })
    }

    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let params = ModelParams::init(arch, seed)?;
        let norm = NormState::fresh(&params);
        Ok(Self { params, norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_chains_shapes() {
        let arch = Architecture::reference(16, 4);
        let p = ModelParams::init(&arch, 1).unwrap();
        assert_eq!(p.input_dim(), 16);
        assert_eq!(p.feature_dim(), 32);
        assert_eq!(p.num_classes(), 4);
        assert_eq!(p.layers()[0].activation, Activation::Relu);
        assert_eq!(p.layers()[1].activation, Activation::Identity);
        let b = 1.0 / 4.0;
        assert!(p.layers()[0].weight.data().iter().all(|w| w.abs() <= b));
        assert_eq!(ModelParams::init(&arch, 1).unwrap(), p);
    }

    #[test]
    fn new_rejects_broken_chains() {
        let arch = Architecture::reference(3, 2);
        let p = ModelParams::init(&arch, 0).unwrap();
        let mut layers = p.layers().to_vec();
        layers[1].weight = Matrix::zeros(32, 31);
        assert!(ModelParams::new(layers, p.classifier().clone()).is_err());
        assert!(ModelParams::new(p.layers().to_vec(), Matrix::zeros(2, 5)).is_err());
        let mut layers = p.layers().to_vec();
        layers[0].beta[(0, 0)] = f64::NAN;
        assert!(ModelParams::new(layers, p.classifier().clone()).is_err());
    }

    #[test]
    fn norm_state_validation() {
        let m = Model::init(&Architecture::reference(3, 2), 0).unwrap();
        let mut n = m.norm.clone();
        n.layers[0].var[0] = 0.0;
        assert!(Model::new(m.params.clone(), n).is_err());
    }
}
