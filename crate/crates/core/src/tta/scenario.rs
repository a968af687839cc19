use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{apply_shift, Dataset, ShiftKind, ShiftSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Rng;

use super::config::{AdaptConfig, Method};
use super::engine::{Adapter, StepLog};

/// Stream definition. Segment `i` uses shift seed `seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// One shifted copy of the test set.
    Mild { shift: ShiftKind, severity: u8 },
    /// Consecutive segments, one per severity, adapted without reset.
    Ctta { shift: ShiftKind, severities: Vec<u8> },
    /// One sample per step with running statistics.
    Bs1 { shift: ShiftKind, severity: u8 },
}

impl Scenario {
    pub fn ctta(shift: ShiftKind) -> Self {
        Scenario::Ctta { shift, severities: vec![1, 2, 3, 4, 5] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Mild { .. } => "mild",
            Scenario::Ctta { .. } => "ctta",
            Scenario::Bs1 { .. } => "bs1",
        }
    }

    pub fn segment_specs(&self, seed: u64) -> Result<Vec<ShiftSpec>> {
        let (shift, sev): (ShiftKind, &[u8]) = match self {
            Scenario::Mild { shift, severity } | Scenario::Bs1 { shift, severity } => {
                (*shift, std::slice::from_ref(severity))
            }
            Scenario::Ctta { shift, severities } => (*shift, severities),
        };
        if sev.is_empty() {
            return Err(Error::Config("ctta scenario needs at least one severity".into()));
        }
        sev.iter().enumerate().map(|(i, &s)| ShiftSpec::new(shift, s, seed.wrapping_add(i as u64))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub shift: ShiftKind,
    pub severity: u8,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_gfca: f64,
    /// Mean batch G-FCA over the last tenth of the segment's steps (at least one).
    pub final_mean_gfca: f64,
}

/// Result of one scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: Scenario,
    pub config: AdaptConfig,
    pub seed: u64,
    pub segments: Vec<SegmentSummary>,
    /// Stream accuracy over all samples.
    pub accuracy: f64,
    /// Same as the last segment's `final_mean_gfca`.
    pub final_mean_gfca: f64,
    pub updates: usize,
    #[serde(skip)]
    pub steps: Vec<StepLog>,
}

impl RunLog {
    pub fn segment_accuracies(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.accuracy).collect()
    }

    /// Batch G-FCA per step, the trajectory used in comparisons.
    pub fn gfca_trajectory(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mean_gfca).collect()
    }

    /// Writes `<stem>.json` (summary) and `<stem>.steps.csv` (one row per step).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        write_steps_csv(&self.steps, &dir.join(format!("{stem}.steps.csv")))
    }
}

/// Columns follow the field order of [`StepLog`].
pub fn write_steps_csv(steps: &[StepLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in steps {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepLog>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const ORDER_STREAM: u64 = 0x6f72_6465_72;

/// Visiting order of segment `segment` for a stream of `n` samples.
pub fn segment_order(seed: u64, segment: usize, n: usize) -> Vec<usize> {
    Rng::derive(seed, ORDER_STREAM + segment as u64).permutation(n)
}

fn tail_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = (xs.len() / 10).max(1);
    xs[xs.len() - n..].iter().sum::<f64>() / n as f64
}

/// Streams the shifted test set through an [`Adapter`].
///
/// `test` must be unshifted; each segment applies its own shift and visits
/// samples in a seeded order. The model carries over between segments.
pub fn run_scenario(
    model: Model,
    test: &Dataset,
    scenario: &Scenario,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<(RunLog, Model)> {
    if test.is_shifted() {
        return Err(Error::invalid("run_scenario expects the unshifted test set"));
    }
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let specs = scenario.segment_specs(seed)?;
    let mut cfg = cfg.clone();
    let bs1 = matches!(scenario, Scenario::Bs1 { .. });
    if bs1 {
        cfg.batch_size = 1;
    }
    let mut adapter = Adapter::new(model, cfg.clone())?;
    if bs1 {
        if cfg.method == Method::BnAdapt {
            return Err(Error::Config("bn_adapt is undefined for single-sample streams".into()));
        }
        adapter = adapter.use_eval_statistics()?;
    }

    let mut steps = Vec::new();
    let mut segments = Vec::with_capacity(specs.len());
    let (mut correct, mut total) = (0usize, 0usize);
    for (i, spec) in specs.iter().enumerate() {
        let shifted = apply_shift(test, spec)?;
        let order = segment_order(seed, i, shifted.len());
        let first = steps.len();
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = shifted.batch(idx);
            steps.push(adapter.adapt_step(&x, &y, i)?);
        }
        let seg = &steps[first..];
        let seg_correct: usize = seg.iter().map(|s| s.correct).sum();
        let gf: Vec<f64> = seg.iter().map(|s| s.mean_gfca).collect();
        segments.push(SegmentSummary {
            index: i,
            shift: spec.kind(),
            severity: spec.severity(),
            samples: shifted.len(),
            accuracy: seg_correct as f64 / shifted.len() as f64,
            mean_gfca: gf.iter().sum::<f64>() / gf.len() as f64,
            final_mean_gfca: tail_mean(&gf),
        });
        correct += seg_correct;
        total += shifted.len();
    }
    let log = RunLog {
        scenario: scenario.clone(),
        config: cfg,
        seed,
        final_mean_gfca: segments.last().map_or(0.0, |s| s.final_mean_gfca),
        accuracy: correct as f64 / total as f64,
        updates: steps.iter().filter(|s| s.updated).count(),
        segments,
        steps,
    };
    Ok((log, adapter.into_model()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_clusters;
    use crate::model::Architecture;

    fn setup() -> (Model, Dataset) {
        let m = Model::init(&Architecture::reference(4, 3), 3).unwrap();
        (m, make_clusters(3, 4, 20, 0.5, 3).unwrap())
    }

    #[test]
    fn ctta_has_one_segment_per_severity_and_no_reset() {
        let (m, test) = setup();
        let cfg = AdaptConfig { batch_size: 16, ..AdaptConfig::tent() };
        let sc = Scenario::ctta(ShiftKind::GaussianNoise);
        let (log, out) = run_scenario(m.clone(), &test, &sc, &cfg, 0).unwrap();
        assert_eq!(log.segments.len(), 5);
        assert_eq!(log.steps.len(), 5 * 4);
        assert_eq!(log.steps.iter().map(|s| s.step).collect::<Vec<_>>(), (0..20).collect::<Vec<_>>());
        let sevs: Vec<u8> = log.segments.iter().map(|s| s.severity).collect();
        assert_eq!(sevs, [1, 2, 3, 4, 5]);
        assert_ne!(out.params, m.params);
    }

    #[test]
    fn bs1_forces_single_sample_steps() {
        let (m, test) = setup();
        let sc = Scenario::Bs1 { shift: ShiftKind::Rotation, severity: 2 };
        let (log, _) = run_scenario(m.clone(), &test, &sc, &AdaptConfig::tent(), 1).unwrap();
        assert_eq!(log.steps.len(), test.len());
        assert!(log.steps.iter().all(|s| s.batch_size == 1));
        assert_eq!(log.config.batch_size, 1);
        let bn = AdaptConfig::default().with_method(Method::BnAdapt);
        assert!(run_scenario(m, &test, &sc, &bn, 1).is_err());
    }

    #[test]
    fn runs_are_deterministic_and_round_trip() {
        let (m, test) = setup();
        let sc = Scenario::Mild { shift: ShiftKind::GaussianNoise, severity: 3 };
        let cfg = AdaptConfig { batch_size: 8, ..AdaptConfig::default() };
        let (a, ma) = run_scenario(m.clone(), &test, &sc, &cfg, 4).unwrap();
        let (b, mb) = run_scenario(m, &test, &sc, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path(), "run").unwrap();
        assert_eq!(read_steps_csv(&dir.path().join("run.steps.csv")).unwrap(), a.steps);
        let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
        let back: RunLog = serde_json::from_str(&text).unwrap();
        assert_eq!(back.segments, a.segments);
    }

    #[test]
    fn shifted_input_is_rejected() {
        let (m, test) = setup();
        let spec = ShiftSpec::new(ShiftKind::GaussianNoise, 1, 0).unwrap();
        let shifted = apply_shift(&test, &spec).unwrap();
        let sc = Scenario::Mild { shift: ShiftKind::GaussianNoise, severity: 1 };
        assert!(run_scenario(m, &shifted, &sc, &AdaptConfig::default(), 0).is_err());
    }

    #[test]
    fn tail_mean_uses_last_tenth() {
        assert_eq!(tail_mean(&[5.0]), 5.0);
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(tail_mean(&xs), 18.5);
    }
}
