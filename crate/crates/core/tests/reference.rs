//! Checks on the reference experiment that go through the file artifacts.

use nclab_core::data::{ShiftKind, ShiftSpec};
use nclab_core::metrics::{group_stats, read_sample_csv};
use nclab_core::model::load_checkpoint;
use nclab_core::report::{
    cmd_metrics, cmd_project, cmd_train, dump_silhouette, read_projection_csv, ExperimentConfig, FeatureView,
    CHECKPOINT_FILE, TRACE_FILE,
};
use nclab_core::tta::{AdaptConfig, Method, Scenario, UpdatePolicy};

#[test]
fn reference_artifacts_tell_the_same_story() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::reference();
    let t = cmd_train(&cfg, dir.path()).unwrap();

    // trace CSV final row carries the collapsed G-FCA
    let mut rdr = csv::Reader::from_path(dir.path().join(TRACE_FILE)).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "mean_gfca").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let last: f64 = rows.last().unwrap()[col].parse().unwrap();
    let first: f64 = rows[0][col].parse().unwrap();
    assert!(last < 0.3 && last < 0.5 * first, "{first} -> {last}");

    // train-set metrics at the end of training
    let model = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let m = cmd_metrics(&cfg, &model, &t.train, None, &dir.path().join("train_metrics")).unwrap();
    assert!(m.nc.nc4 >= 0.99, "nc4 {}", m.nc.nc4);

    // shifted test metrics: CSV regroups to the JSON summary
    let spec = ShiftSpec::new(ShiftKind::GaussianNoise, 3, 0).unwrap();
    let out = dir.path().join("test_metrics");
    let m = cmd_metrics(&cfg, &model, &t.test, Some(&spec), &out).unwrap();
    let rows = read_sample_csv(&out.join("samples.csv")).unwrap();
    assert_eq!(rows.len(), t.test.len());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let regrouped = group_stats(&rows);
    for (group, ours) in [("correct", &regrouped.correct), ("wrong", &regrouped.wrong)] {
        let ours = ours.as_ref().unwrap();
        for (key, value) in [("mean_gfca", ours.mean_gfca), ("mean_pfca", ours.mean_pfca)] {
            let stored = json["misalignment"][group][key].as_f64().unwrap();
            assert!((stored - value).abs() <= 1e-10, "{group}.{key}: {stored} vs {value}");
        }
    }
    assert_eq!(m.misalignment.total, rows.len());
}

#[test]
fn nctta_features_separate_better_than_tent_under_heavy_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::reference();
    cfg.adapt = AdaptConfig { update_policy: UpdatePolicy::ExtractorAll, lr: 0.02, k: 1, ..AdaptConfig::default() };
    let t = cmd_train(&cfg, dir.path()).unwrap();
    let sc = Scenario::Mild { shift: ShiftKind::GaussianNoise, severity: 5 };
    let methods = [Method::Tent, Method::Nctta];
    for seed in [0, 1] {
        let out = dir.path().join(format!("proj{seed}"));
        let p = cmd_project(&cfg, &t.model, &t.test, &sc, &methods, FeatureView::Unit, seed, &out).unwrap();
        let rows = read_projection_csv(&out.join("projection.csv")).unwrap();
        assert_eq!(rows.len(), 2 * t.test.len());
        let tent = dump_silhouette(&rows, "tent").unwrap();
        let nctta = dump_silhouette(&rows, "nctta").unwrap();
        assert!((tent - p.silhouette["tent"]).abs() < 1e-12);
        assert!(nctta > tent, "seed {seed}: silhouette nctta {nctta} vs tent {tent}");

        // the raw-feature picture is not asserted; it is close and can go either way
        let raw =
            cmd_project(&cfg, &t.model, &t.test, &sc, &methods, FeatureView::Raw, seed, &out.join("raw")).unwrap();
        eprintln!(
            "seed {seed}: unit tent {tent:.4} nctta {nctta:.4}; raw tent {:.4} nctta {:.4}",
            raw.silhouette["tent"], raw.silhouette["nctta"]
        );
    }
}
