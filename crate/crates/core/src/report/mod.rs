//! Configuration files, run manifests, plot-ready exports and the
//! experiment commands behind the CLI.
//!
//! Config files are TOML with four sections:
//!
//! ```toml
//! [data]   # num_classes, dim, spread, train_per_class, test_per_class, seed
//! [model]  # hidden = [32, 32], final_activation = "identity", seed
//! [train]  # epochs, lr, momentum, weight_decay, batch_size, seed, post_zero_epochs, max_epochs
//! [adapt]  # optional; any AdaptConfig key
//! ```

mod commands;
mod config;
mod manifest;
mod projection;
mod sweep;

pub use commands::{
    adapted_features, cmd_adapt, cmd_eval, cmd_metrics, cmd_project, cmd_sweep, cmd_train, EvalReport, MetricsReport,
    ProjectionOutput, SweepCell, TrainOutput, CHECKPOINT_FILE, TEST_DATA_FILE, TRACE_FILE, TRAIN_DATA_FILE,
};
pub use config::{DataConfig, ExperimentConfig, ModelConfig};
pub use manifest::{read_manifest, record_inputs, ManifestBuilder, RunManifest, MANIFEST_FILE};
pub use projection::{
    dump_silhouette, pca2, project_method, read_projection_csv, silhouette, write_projection_csv, FeatureView,
    ProjectionRow,
};
pub use sweep::{cell_label, set_param, SweepAxis, SweepSpec};
