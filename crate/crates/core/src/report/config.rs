use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClusterGenerator, Dataset};
use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, Model, TrainConfig};
use crate::tta::AdaptConfig;

/// `[data]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

/// `[model]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "identity")]
    pub final_activation: Activation,
    pub seed: u64,
}

fn identity() -> Activation {
    Activation::Identity
}

/// Whole experiment: data, model, training and adaptation settings.
///
/// `[data]`, `[model]` and `[train]` are required; `[adapt]` falls back to
/// the engine defaults key by key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
}

impl ExperimentConfig {
    /// K=4 clusters in 16 dimensions, 50 training and 1000 test samples per class.
    pub fn reference() -> Self {
        Self {
            data: DataConfig {
                num_classes: 4,
                dim: 16,
                spread: 0.5,
                train_per_class: 50,
                test_per_class: 1000,
                seed: 0,
            },
            model: ModelConfig { hidden: vec![32, 32], final_activation: Activation::Identity, seed: 0 },
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.num_classes < 2 || d.dim < 1 || d.train_per_class < 2 || d.test_per_class < 1 {
            return Err(Error::Config(
                "[data] needs num_classes >= 2, dim >= 1, train_per_class >= 2, test_per_class >= 1".into(),
            ));
        }
        if !(d.spread > 0.0 && d.spread.is_finite()) {
            return Err(Error::Config(format!("[data] spread must be > 0, got {}", d.spread)));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config("[model] hidden must list positive widths".into()));
        }
        self.train.validate().map_err(|e| Error::Config(format!("[train] {e}")))?;
        self.adapt.validate(Some(d.num_classes)).map_err(|e| Error::Config(format!("[adapt] {e}")))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.data.dim,
            hidden: self.model.hidden.clone(),
            num_classes: self.data.num_classes,
            final_activation: self.model.final_activation,
        }
    }

    pub fn generator(&self) -> Result<ClusterGenerator> {
        let d = &self.data;
        ClusterGenerator::new(d.num_classes, d.dim, d.spread, d.seed)
    }

    /// Training set (stream 0) and unshifted test set (stream 1) from the same centers.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let g = self.generator()?;
        Ok((g.sample(self.data.train_per_class, 0)?, g.sample(self.data.test_per_class, 1)?))
    }

    pub fn init_model(&self) -> Result<Model> {
        Model::init(&self.architecture(), self.model.seed)
    }
}
