use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::Matrix;

use super::{Dataset, DatasetMeta};

/// Draws tried when placing cluster centers.
pub const CENTER_ATTEMPTS: usize = 256;
/// Required minimum center separation, as a multiple of the radius.
pub const MIN_CENTER_GAP: f64 = 1.25;

const GENERATOR_NAME: &str = "gaussian_clusters";

/// K isotropic Gaussian clusters whose centers lie on a sphere of radius R.
///
/// Centers are drawn uniformly on the sphere and redrawn (up to
/// [`CENTER_ATTEMPTS`] times) until every pair is at least
/// `MIN_CENTER_GAP * R` apart; if no draw qualifies the best-separated one
/// is kept. Samples from different streams share the same centers.
#[derive(Clone, Debug)]
pub struct ClusterGenerator {
    num_classes: usize,
    dim: usize,
    spread: f64,
    radius: f64,
    seed: u64,
    centers: Vec<Vec<f64>>,
}

impl ClusterGenerator {
    /// Generator with the default radius `4 * spread`.
    pub fn new(num_classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        Self::with_radius(num_classes, dim, spread, 4.0 * spread, seed)
    }

    pub fn with_radius(num_classes: usize, dim: usize, spread: f64, radius: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if dim < 2 {
            return Err(Error::invalid(format!("need dimension at least 2, got {dim}")));
        }
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::invalid(format!("spread must be positive, got {spread}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }

        let mut rng = Rng::derive(seed, u64::MAX);
        let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
        for _ in 0..CENTER_ATTEMPTS {
            let centers: Vec<Vec<f64>> =
                (0..num_classes).map(|_| rng.unit_vector(dim).into_iter().map(|u| u * radius).collect()).collect();
            let gap = min_pairwise_distance(&centers);
            if gap >= MIN_CENTER_GAP * radius {
                best = Some((gap, centers));
                break;
            }
            if best.as_ref().map_or(true, |(g, _)| gap > *g) {
                best = Some((gap, centers));
            }
        }
        let (_, centers) = best.expect("at least one attempt");
        Ok(Self { num_classes, dim, spread, radius, seed, centers })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    /// Balanced sample with `n_per_class` points per class.
    pub fn sample(&self, n_per_class: usize, stream: u64) -> Result<Dataset> {
        if n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be at least 1"));
        }
        self.sample_counts(&vec![n_per_class; self.num_classes], stream)
    }

    /// Sample with an explicit per-class count (the imbalance knob).
    pub fn sample_counts(&self, counts: &[usize], stream: u64) -> Result<Dataset> {
        if counts.len() != self.num_classes {
            return Err(Error::invalid(format!("{} class counts for {} classes", counts.len(), self.num_classes)));
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::invalid("dataset would be empty"));
        }
        let mut rng = Rng::derive(self.seed, stream);
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for (k, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                data.extend(self.centers[k].iter().map(|c| c + self.spread * rng.normal()));
                labels.push(k);
            }
        }
        let meta = DatasetMeta {
            seed: self.seed,
            stream,
            num_classes: self.num_classes,
            dim: self.dim,
            spread: self.spread,
            generator: GENERATOR_NAME.into(),
            shift_kind: None,
            severity: 0,
            shift_seed: None,
            class_counts: Vec::new(),
        };
        Dataset::new(Matrix::new(n, self.dim, data)?, labels, meta)
    }
}

/// Balanced cluster dataset from stream 0 of the generator seeded by `seed`.
pub fn make_clusters(num_classes: usize, dim: usize, n_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    ClusterGenerator::new(num_classes, dim, spread, seed)?.sample(n_per_class, 0)
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_clusters(1, 4, 10, 0.5, 0).is_err());
        assert!(make_clusters(3, 1, 10, 0.5, 0).is_err());
        assert!(make_clusters(3, 4, 0, 0.5, 0).is_err());
        assert!(make_clusters(3, 4, 10, 0.0, 0).is_err());
        assert!(make_clusters(3, 4, 10, f64::NAN, 0).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_clusters(3, 5, 20, 0.4, 9).unwrap();
        let b = make_clusters(3, 5, 20, 0.4, 9).unwrap();
        assert_eq!(a, b);
        let c = make_clusters(3, 5, 20, 0.4, 10).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn centers_sit_on_the_sphere() {
        let g = ClusterGenerator::new(4, 16, 0.5, 7).unwrap();
        for c in g.centers() {
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_counts_and_labels() {
        let d = make_clusters(4, 3, 7, 1.0, 1).unwrap();
        assert_eq!(d.len(), 28);
        assert_eq!(d.meta().class_counts, vec![7; 4]);
        assert_eq!(d.meta().severity, 0);
        assert!(d.meta().shift_kind.is_none());
    }

    #[test]
    fn tight_clusters_are_linearly_separable() {
        let d = make_clusters(2, 2, 50, 1e-6, 3).unwrap();
        let means: Vec<Vec<f64>> = d.class_means().into_iter().map(Option::unwrap).collect();
        // Nearest-mean rule is the linear classifier with w = m0 - m1.
        let w: Vec<f64> = means[0].iter().zip(&means[1]).map(|(a, b)| a - b).collect();
        let mid: Vec<f64> = means[0].iter().zip(&means[1]).map(|(a, b)| (a + b) / 2.0).collect();
        for (row, &y) in d.features().iter_rows().zip(d.labels()) {
            let s: f64 = row.iter().zip(&w).zip(&mid).map(|((x, w), m)| (x - m) * w).sum();
            assert_eq!(if s > 0.0 { 0 } else { 1 }, y);
        }
    }

    #[test]
    fn class_means_are_well_separated() {
        let g = ClusterGenerator::new(4, 16, 0.5, 7).unwrap();
        let d = g.sample(200, 0).unwrap();
        let means: Vec<Vec<f64>> = d.class_means().into_iter().map(Option::unwrap).collect();
        for (m, c) in means.iter().zip(g.centers()) {
            let err = m.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            // Sampling error of a 200-point mean is about spread * sqrt(D / n) = 0.14.
            assert!(err < 0.35, "empirical mean {err} away from its center");
        }
        assert!(min_pairwise_distance(&means) >= 4.0 * 0.5);
    }

    #[test]
    fn streams_share_centers_but_not_samples() {
        let g = ClusterGenerator::new(3, 4, 0.5, 2).unwrap();
        let a = g.sample(5, 0).unwrap();
        let b = g.sample(5, 1).unwrap();
        assert_ne!(a.features(), b.features());
        assert_eq!(b.meta().stream, 1);
    }

    #[test]
    fn imbalanced_counts_are_recorded() {
        let g = ClusterGenerator::new(3, 4, 0.5, 2).unwrap();
        let d = g.sample_counts(&[5, 0, 2], 0).unwrap();
        assert_eq!(d.meta().class_counts, vec![5, 0, 2]);
        assert!(d.class_means()[1].is_none());
    }
}
