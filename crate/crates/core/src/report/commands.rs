//! Experiment commands. Each writes its artifacts plus `manifest.json` into
//! an output directory and returns the in-memory results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{apply_shift, save_dataset, sidecar_path, Dataset, ShiftSpec};
use crate::error::{Error, Result};
use crate::metrics::{group_stats, nc_suite, sample_metrics, write_sample_csv, MisalignmentStats, NcReport};
use crate::model::{save_checkpoint, train_to_tpt, write_trace_csv, Model, TrainTrace};
use crate::tensor::ops::argmax;
use crate::tta::{run_scenario, Method, RunLog, Scenario};
use crate::Matrix;

use super::config::ExperimentConfig;
use super::manifest::{ManifestBuilder, RunManifest};
use super::projection::{dump_silhouette, project_method, write_projection_csv, FeatureView, ProjectionRow};
use super::sweep::{cell_label, set_param, SweepSpec};

pub const TRAIN_DATA_FILE: &str = "train.ncds";
pub const TEST_DATA_FILE: &str = "test.ncds";
pub const CHECKPOINT_FILE: &str = "model.ncck";
pub const TRACE_FILE: &str = "trace.csv";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub trace: TrainTrace,
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: RunManifest,
}

/// Generates the datasets, trains into the terminal phase and saves
/// `train.ncds`, `test.ncds`, `model.ncck` and `trace.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut mb = ManifestBuilder::new("train", cfg, vec![cfg.data.seed, cfg.model.seed, cfg.train.seed]);
    let (train, test) = cfg.datasets()?;
    let (model, trace) = train_to_tpt(cfg.init_model()?, &train, &cfg.train)?;
    save_dataset(&train, &out.join(TRAIN_DATA_FILE))?;
    save_dataset(&test, &out.join(TEST_DATA_FILE))?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    write_trace_csv(&trace, &out.join(TRACE_FILE))?;
    mb.dataset(train.meta()).dataset(test.meta());
    for f in [TRAIN_DATA_FILE, TEST_DATA_FILE, CHECKPOINT_FILE, TRACE_FILE] {
        mb.artifact(f);
    }
    for f in [TRAIN_DATA_FILE, TEST_DATA_FILE] {
        mb.artifact(sidecar_path(Path::new(f)));
    }
    let manifest = mb.finish(out)?;
    Ok(TrainOutput { model, trace, train, test, manifest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub shift: Option<ShiftSpec>,
}

fn shifted(data: &Dataset, shift: Option<&ShiftSpec>) -> Result<Dataset> {
    match shift {
        Some(s) => apply_shift(data, s),
        None => Ok(data.clone()),
    }
}

/// Running-statistics accuracy without any adaptation.
pub fn cmd_eval(model: &Model, data: &Dataset, shift: Option<&ShiftSpec>) -> Result<EvalReport> {
    let d = shifted(data, shift)?;
    let out = model.predict(d.features())?;
    let correct = (0..d.len()).filter(|&i| argmax(out.z.row(i)) == d.labels()[i]).count();
    Ok(EvalReport { samples: d.len(), correct, accuracy: correct as f64 / d.len() as f64, shift: shift.copied() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub nc: NcReport,
    pub misalignment: MisalignmentStats,
    pub shift: Option<ShiftSpec>,
}

/// Per-sample G-FCA/P-FCA export (`samples.csv`) and the NC summary (`metrics.json`).
pub fn cmd_metrics(
    cfg: &ExperimentConfig,
    model: &Model,
    data: &Dataset,
    shift: Option<&ShiftSpec>,
    out: &Path,
) -> Result<MetricsReport> {
    ensure_dir(out)?;
    let mut mb = ManifestBuilder::new("metrics", cfg, shift.map(|s| s.seed()).into_iter().collect());
    let d = shifted(data, shift)?;
    let f = model.predict(d.features())?;
    let omega = model.params.classifier();
    let rows = sample_metrics(&f.h, omega, d.labels(), &f.p)?;
    let report = MetricsReport {
        accuracy: rows.iter().filter(|r| r.correct).count() as f64 / rows.len() as f64,
        nc: nc_suite(&f.h, d.labels(), omega)?,
        misalignment: group_stats(&rows),
        shift: shift.copied(),
    };
    write_sample_csv(&rows, &out.join("samples.csv"))?;
    write_json(&report, &out.join("metrics.json"))?;
    mb.dataset(d.meta()).artifact("samples.csv").artifact("metrics.json");
    mb.finish(out)?;
    Ok(report)
}

/// One scenario run per seed, written as `run_seed<N>.json` / `.steps.csv`.
pub fn cmd_adapt(
    cfg: &ExperimentConfig,
    model: &Model,
    test: &Dataset,
    scenario: &Scenario,
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<RunLog>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut mb = ManifestBuilder::new("adapt", cfg, seeds.to_vec());
    mb.dataset(test.meta());
    let mut logs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (log, _) = run_scenario(model.clone(), test, scenario, &cfg.adapt, seed)?;
        let stem = format!("run_seed{seed}");
        log.write(out, &stem)?;
        mb.artifact(format!("{stem}.json")).artifact(format!("{stem}.steps.csv"));
        logs.push(log);
    }
    mb.finish(out)?;
    Ok(logs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub label: String,
    pub params: Vec<(String, f64)>,
    pub accuracy: f64,
    pub final_mean_gfca: f64,
    pub file: PathBuf,
}

/// Runs `scenario` once per grid cell and writes `sweep.csv` plus one RunLog per cell.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    model: &Model,
    test: &Dataset,
    scenario: &Scenario,
    spec: &SweepSpec,
    seed: u64,
    out: &Path,
) -> Result<Vec<SweepCell>> {
    ensure_dir(out)?;
    let mut mb = ManifestBuilder::new("sweep", cfg, vec![seed]);
    mb.dataset(test.meta());
    let mut cells = Vec::with_capacity(spec.len());
    for params in spec.cells() {
        let mut adapt = cfg.adapt.clone();
        for (k, v) in &params {
            set_param(&mut adapt, k, *v)?;
        }
        let label = cell_label(&params);
        adapt.validate(Some(test.num_classes())).map_err(|e| Error::Config(format!("sweep cell {label}: {e}")))?;
        let (log, _) = run_scenario(model.clone(), test, scenario, &adapt, seed)?;
        let stem = format!("cell_{label}");
        log.write(out, &stem)?;
        mb.artifact(format!("{stem}.json")).artifact(format!("{stem}.steps.csv"));
        cells.push(SweepCell {
            label,
            params,
            accuracy: log.accuracy,
            final_mean_gfca: log.final_mean_gfca,
            file: PathBuf::from(format!("{stem}.json")),
        });
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    let names: Vec<&str> = spec.axes.iter().map(|a| a.name.as_str()).collect();
    let mut header = names.clone();
    header.extend(["accuracy", "final_mean_gfca", "file"]);
    w.write_record(&header)?;
    for c in &cells {
        let mut rec: Vec<String> = c.params.iter().map(|(_, v)| v.to_string()).collect();
        rec.push(c.accuracy.to_string());
        rec.push(c.final_mean_gfca.to_string());
        rec.push(c.file.display().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    mb.artifact("sweep.csv");
    mb.finish(out)?;
    Ok(cells)
}

/// Features of the whole stream after a scenario run: running statistics
/// for `no_adapt`, full-set batch statistics otherwise.
pub fn adapted_features(model: &Model, method: Method, x: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    let f = if method == Method::NoAdapt { model.predict(x)? } else { model.forward_batch_stats(x)? };
    let pred = (0..x.rows()).map(|i| argmax(f.z.row(i))).collect();
    Ok((f.h, pred))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOutput {
    pub view: FeatureView,
    pub rows: Vec<ProjectionRow>,
    pub silhouette: BTreeMap<String, f64>,
}

/// Adapts once per method on the mild `scenario`, then dumps PCA-2
/// coordinates (`projection.csv`) and silhouettes (`silhouette.json`).
#[allow(clippy::too_many_arguments)]
pub fn cmd_project(
    cfg: &ExperimentConfig,
    model: &Model,
    test: &Dataset,
    scenario: &Scenario,
    methods: &[Method],
    view: FeatureView,
    seed: u64,
    out: &Path,
) -> Result<ProjectionOutput> {
    if methods.is_empty() {
        return Err(Error::invalid("project needs at least one method"));
    }
    let Scenario::Mild { .. } = scenario else {
        return Err(Error::Config("project runs on a mild scenario".into()));
    };
    ensure_dir(out)?;
    let mut mb = ManifestBuilder::new("project", cfg, vec![seed]);
    let spec = scenario.segment_specs(seed)?[0];
    let stream = apply_shift(test, &spec)?;
    mb.dataset(stream.meta());
    let mut rows = Vec::new();
    let mut silhouette = BTreeMap::new();
    for &m in methods {
        let adapt = cfg.adapt.clone().with_method(m);
        let (_, adapted) = run_scenario(model.clone(), test, scenario, &adapt, seed)?;
        let (h, pred) = adapted_features(&adapted, m, stream.features())?;
        let mine = project_method(m.name(), &h, view, stream.labels(), &pred)?;
        silhouette.insert(m.name().to_string(), dump_silhouette(&mine, m.name())?);
        rows.extend(mine);
    }
    write_projection_csv(&rows, &out.join("projection.csv"))?;
    write_json(&serde_json::json!({ "view": view, "silhouette": &silhouette }), &out.join("silhouette.json"))?;
    mb.artifact("projection.csv").artifact("silhouette.json");
    mb.finish(out)?;
    Ok(ProjectionOutput { view, rows, silhouette })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ShiftKind;
    use crate::model::load_checkpoint;
    use crate::report::read_manifest;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::reference();
        c.data.train_per_class = 10;
        c.data.test_per_class = 30;
        c.data.dim = 6;
        c.model.hidden = vec![8, 8];
        c.train.epochs = 20;
        c.train.post_zero_epochs = 5;
        c.adapt.batch_size = 32;
        c
    }

    #[test]
    fn train_then_eval_and_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let t = cmd_train(&cfg, dir.path()).unwrap();
        assert_eq!(load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap(), t.model);
        let man = read_manifest(dir.path()).unwrap();
        assert_eq!(man.artifacts.len(), 6);
        assert_eq!(man.datasets.len(), 2);

        let spec = ShiftSpec::new(ShiftKind::GaussianNoise, 2, 0).unwrap();
        let ev = cmd_eval(&t.model, &t.test, Some(&spec)).unwrap();
        let mdir = dir.path().join("m");
        let mr = cmd_metrics(&cfg, &t.model, &t.test, Some(&spec), &mdir).unwrap();
        assert_eq!(ev.accuracy, mr.accuracy);
        assert_eq!(mr.misalignment.total, t.test.len());
    }

    #[test]
    fn sweep_writes_one_log_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let t = cmd_train(&cfg, dir.path()).unwrap();
        let sc = Scenario::Mild { shift: ShiftKind::GaussianNoise, severity: 1 };
        let spec = SweepSpec::parse("alpha=0:1:0.5,k=1:2").unwrap();
        let sdir = dir.path().join("sweep");
        let cells = cmd_sweep(&cfg, &t.model, &t.test, &sc, &spec, 0, &sdir).unwrap();
        assert_eq!(cells.len(), 6);
        for c in &cells {
            assert!(sdir.join(&c.file).exists());
        }
        let rows = csv::Reader::from_path(sdir.join("sweep.csv")).unwrap().records().count();
        assert_eq!(rows, 6);
    }

    #[test]
    fn projection_has_a_row_per_sample_and_method() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let t = cmd_train(&cfg, dir.path()).unwrap();
        let sc = Scenario::Mild { shift: ShiftKind::GaussianNoise, severity: 3 };
        let methods = [Method::NoAdapt, Method::Tent, Method::Nctta];
        let p =
            cmd_project(&cfg, &t.model, &t.test, &sc, &methods, FeatureView::Unit, 1, &dir.path().join("p")).unwrap();
        assert_eq!(p.rows.len(), 3 * t.test.len());
        assert_eq!(p.silhouette.len(), 3);
        let again =
            cmd_project(&cfg, &t.model, &t.test, &sc, &methods, FeatureView::Unit, 1, &dir.path().join("q")).unwrap();
        assert_eq!(p, again);
    }
}
