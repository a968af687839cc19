//! Distribution shifts indexed by severity 1-5.
//!
//! | kind              | parameter per severity 1..5                  |
//! |-------------------|----------------------------------------------|
//! | `gaussian_noise`  | noise std 0.25, 0.5, 1.0, 1.5, 2.0 x spread  |
//! | `mean_shift`      | offset length 0.5, 1, 1.5, 2, 3 x spread     |
//! | `rotation`        | angle 10, 20, 30, 45, 60 degrees             |
//! | `feature_scale`   | max per-feature factor 1.25, 1.5, 2, 2.5, 3  |
//! | `feature_dropout` | zeroing probability 0.05, 0.1, 0.2, 0.3, 0.4 |
//!
//! Rotation acts on a random 2-D subspace about the origin. Feature scaling
//! multiplies feature j by `s^u_j` with `u_j` uniform in [-1, 1].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::Matrix;

use super::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    GaussianNoise,
    MeanShift,
    Rotation,
    FeatureScale,
    FeatureDropout,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 5] = [
        ShiftKind::GaussianNoise,
        ShiftKind::MeanShift,
        ShiftKind::Rotation,
        ShiftKind::FeatureScale,
        ShiftKind::FeatureDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::GaussianNoise => "gaussian_noise",
            ShiftKind::MeanShift => "mean_shift",
            ShiftKind::Rotation => "rotation",
            ShiftKind::FeatureScale => "feature_scale",
            ShiftKind::FeatureDropout => "feature_dropout",
        }
    }

    fn schedule(self) -> [f64; 5] {
        match self {
            ShiftKind::GaussianNoise => [0.25, 0.5, 1.0, 1.5, 2.0],
            ShiftKind::MeanShift => [0.5, 1.0, 1.5, 2.0, 3.0],
            ShiftKind::Rotation => [10.0, 20.0, 30.0, 45.0, 60.0],
            ShiftKind::FeatureScale => [1.25, 1.5, 2.0, 2.5, 3.0],
            ShiftKind::FeatureDropout => [0.05, 0.1, 0.2, 0.3, 0.4],
        }
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = ShiftKind::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown shift kind {s:?}; expected one of {names:?}"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    kind: ShiftKind,
    severity: u8,
    seed: u64,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid(format!(
                "severity must be in 1..=5, got {severity} (severity 0 is the unshifted source)"
            )));
        }
        Ok(Self { kind, severity, seed })
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Scalar strength of the shift; strictly increasing in severity.
    ///
    /// Noise and offset kinds report a multiple of the dataset spread,
    /// rotation reports degrees.
    pub fn magnitude(&self) -> f64 {
        self.kind.schedule()[usize::from(self.severity) - 1]
    }

    /// Offset added by a `mean_shift` spec to every sample.
    pub fn mean_shift_vector(&self, dim: usize, spread: f64) -> Vec<f64> {
        let mut rng = self.rng();
        rng.unit_vector(dim).into_iter().map(|u| u * self.magnitude() * spread).collect()
    }

    fn rng(&self) -> Rng {
        Rng::derive(self.seed, 0x5348_4946_5400 + self.kind as u64)
    }
}

/// Applies `spec` to an unshifted dataset; labels are carried over untouched.
pub fn apply_shift(d: &Dataset, spec: &ShiftSpec) -> Result<Dataset> {
    if let Some(kind) = d.meta().shift_kind {
        return Err(Error::AlreadyShifted { kind: kind.to_string(), severity: d.meta().severity });
    }
    let x = d.features();
    let (n, dim) = x.shape();
    let spread = d.meta().spread;
    let m = spec.magnitude();
    let mut rng = spec.rng();

    let features = match spec.kind {
        ShiftKind::GaussianNoise => {
            let sigma = m * spread;
            x.map(|v| v + sigma * rng.normal())
        }
        ShiftKind::MeanShift => {
            let v = spec.mean_shift_vector(dim, spread);
            Matrix::from_fn(n, dim, |i, j| x[(i, j)] + v[j])
        }
        ShiftKind::Rotation => {
            let (u, w) = random_plane(&mut rng, dim);
            let (s, c) = m.to_radians().sin_cos();
            let mut out = x.clone();
            for i in 0..n {
                let row = out.row_mut(i);
                let a: f64 = row.iter().zip(&u).map(|(x, u)| x * u).sum();
                let b: f64 = row.iter().zip(&w).map(|(x, w)| x * w).sum();
                let (a2, b2) = (c * a - s * b, s * a + c * b);
                for j in 0..dim {
                    row[j] += (a2 - a) * u[j] + (b2 - b) * w[j];
                }
            }
            out
        }
        ShiftKind::FeatureScale => {
            let ln_s = m.ln();
            let factors: Vec<f64> = (0..dim).map(|_| (rng.uniform_range(-1.0, 1.0) * ln_s).exp()).collect();
            Matrix::from_fn(n, dim, |i, j| x[(i, j)] * factors[j])
        }
        ShiftKind::FeatureDropout => {
            let mut out = x.clone();
            for v in out.data_mut() {
                if rng.bernoulli(m) {
                    *v = 0.0;
                }
            }
            out
        }
    };

    let mut meta = d.meta().clone();
    meta.shift_kind = Some(spec.kind);
    meta.severity = spec.severity;
    meta.shift_seed = Some(spec.seed);
    Dataset::new(features, d.labels().to_vec(), meta)
}

/// Orthonormal pair spanning a uniformly random plane.
fn random_plane(rng: &mut Rng, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let u = rng.unit_vector(dim);
    loop {
        let mut w = rng.unit_vector(dim);
        let p: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        for (wi, ui) in w.iter_mut().zip(&u) {
            *wi -= p * ui;
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return (u, w.into_iter().map(|x| x / n).collect());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_clusters;

    fn source() -> Dataset {
        make_clusters(3, 6, 20, 0.5, 4).unwrap()
    }

    #[test]
    fn severity_zero_is_rejected() {
        assert!(ShiftSpec::new(ShiftKind::GaussianNoise, 0, 1).is_err());
        assert!(ShiftSpec::new(ShiftKind::GaussianNoise, 6, 1).is_err());
    }

    #[test]
    fn magnitudes_increase_with_severity() {
        for kind in ShiftKind::ALL {
            let m: Vec<f64> = (1..=5).map(|s| ShiftSpec::new(kind, s, 0).unwrap().magnitude()).collect();
            assert!(m.windows(2).all(|w| w[1] > w[0]), "{kind}: {m:?}");
        }
        let spec = ShiftSpec::new(ShiftKind::GaussianNoise, 3, 0).unwrap();
        assert_eq!(spec.magnitude(), 1.0);
    }

    #[test]
    fn mean_shift_is_invertible() {
        let d = source();
        let spec = ShiftSpec::new(ShiftKind::MeanShift, 4, 11).unwrap();
        let shifted = apply_shift(&d, &spec).unwrap();
        let v = spec.mean_shift_vector(d.dim(), d.meta().spread);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 2.0 * 0.5).abs() < 1e-12);
        for (a, b) in shifted.features().iter_rows().zip(d.features().iter_rows()) {
            for j in 0..v.len() {
                assert!((a[j] - v[j] - b[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shifted_data_cannot_be_shifted_again() {
        let d = source();
        let spec = ShiftSpec::new(ShiftKind::Rotation, 2, 0).unwrap();
        let once = apply_shift(&d, &spec).unwrap();
        assert!(matches!(apply_shift(&once, &spec), Err(Error::AlreadyShifted { severity: 2, .. })));
    }

    #[test]
    fn every_kind_preserves_labels_and_updates_meta() {
        let d = source();
        for kind in ShiftKind::ALL {
            let spec = ShiftSpec::new(kind, 5, 3).unwrap();
            let s = apply_shift(&d, &spec).unwrap();
            assert_eq!(s.labels(), d.labels());
            assert_eq!(s.meta().shift_kind, Some(kind));
            assert_eq!(s.meta().severity, 5);
            assert!(s.features().all_finite());
            assert_ne!(s.features(), d.features(), "{kind} changed nothing");
            assert_eq!(apply_shift(&d, &spec).unwrap(), s, "{kind} not deterministic");
        }
    }

    #[test]
    fn rotation_preserves_norms_and_angle() {
        let d = source();
        let spec = ShiftSpec::new(ShiftKind::Rotation, 4, 8).unwrap();
        let s = apply_shift(&d, &spec).unwrap();
        for (a, b) in s.features().iter_rows().zip(d.features().iter_rows()) {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((na - nb).abs() < 1e-12);
        }
        let mut rng = spec.rng();
        let (u, w) = random_plane(&mut rng, d.dim());
        let x = d.features().row(0);
        let y = s.features().row(0);
        let ang = |r: &[f64]| {
            let a: f64 = r.iter().zip(&u).map(|(x, u)| x * u).sum();
            let b: f64 = r.iter().zip(&w).map(|(x, w)| x * w).sum();
            b.atan2(a)
        };
        let diff = (ang(y) - ang(x)).rem_euclid(std::f64::consts::TAU);
        assert!((diff - 45f64.to_radians()).abs() < 1e-10);
    }

    #[test]
    fn dropout_zeroes_roughly_the_scheduled_fraction() {
        let d = make_clusters(2, 10, 500, 0.5, 1).unwrap();
        let spec = ShiftSpec::new(ShiftKind::FeatureDropout, 3, 2).unwrap();
        let s = apply_shift(&d, &spec).unwrap();
        let zeros = s.features().data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / s.features().len() as f64;
        assert!((frac - 0.2).abs() < 0.02, "{frac}");
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ShiftKind::ALL {
            assert_eq!(kind.name().parse::<ShiftKind>().unwrap(), kind);
        }
        assert!("snow".parse::<ShiftKind>().is_err());
    }
}
