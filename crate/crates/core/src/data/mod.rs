//! Synthetic cluster datasets and severity-indexed distribution shifts.

mod clusters;
mod io;
mod shift;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

pub use clusters::{make_clusters, ClusterGenerator, CENTER_ATTEMPTS, MIN_CENTER_GAP};
pub use io::{load_dataset, save_dataset, sidecar_path, DATASET_MAGIC, DATASET_VERSION};
pub use shift::{apply_shift, ShiftKind, ShiftSpec};

/// Provenance carried with every dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    /// Sample stream drawn from the generator (0 = train, 1 = test by convention).
    pub stream: u64,
    pub num_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub generator: String,
    pub shift_kind: Option<ShiftKind>,
    /// 0 means the unshifted source distribution.
    pub severity: u8,
    pub shift_seed: Option<u64>,
    pub class_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    meta: DatasetMeta,
}

impl Dataset {
    /// Builds a dataset and checks labels, finiteness and the recorded counts.
    pub fn new(features: Matrix, labels: Vec<usize>, mut meta: DatasetMeta) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if features.cols() != meta.dim {
            return Err(Error::invalid(format!("feature width {} does not match dim {}", features.cols(), meta.dim)));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= meta.num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", meta.num_classes)));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if meta.severity > 5 || (meta.severity == 0) != meta.shift_kind.is_none() {
            return Err(Error::invalid(format!(
                "inconsistent shift metadata: kind {:?}, severity {}",
                meta.shift_kind, meta.severity
            )));
        }
        let mut counts = vec![0; meta.num_classes];
        for &y in &labels {
            counts[y] += 1;
        }
        meta.class_counts = counts;
        Ok(Self { features, labels, meta })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn is_shifted(&self) -> bool {
        self.meta.severity > 0
    }

    /// Rows `idx` as a feature batch plus their labels.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (self.features.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Per-class feature means; classes without samples get `None`.
    pub fn class_means(&self) -> Vec<Option<Vec<f64>>> {
        let k = self.meta.num_classes;
        let mut sums = vec![vec![0.0; self.dim()]; k];
        for (row, &y) in self.features.iter_rows().zip(&self.labels) {
            for (s, x) in sums[y].iter_mut().zip(row) {
                *s += x;
            }
        }
        sums.into_iter()
            .zip(&self.meta.class_counts)
            .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect()
    }
}
