//! `nclab`: train, shift, adapt and report on the synthetic benchmark.
//!
//! A typical session:
//!
//! ```text
//! nclab train --out run
//! nclab eval --run run --severity 3
//! nclab adapt --run run --scenario ctta --severities 1,2,3,4,5
//! nclab sweep --run run --sweep alpha=0:1:0.25,k=1:4
//! ```
//!
//! Failures print one JSON object on stderr and exit nonzero.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nclab_core::data::{load_dataset, Dataset, ShiftKind, ShiftSpec};
use nclab_core::model::{load_checkpoint, Model};
use nclab_core::report::{
    cmd_adapt, cmd_eval, cmd_metrics, cmd_project, cmd_sweep, cmd_train, record_inputs, ExperimentConfig, FeatureView,
    ManifestBuilder, SweepSpec, CHECKPOINT_FILE, TEST_DATA_FILE,
};
use nclab_core::tta::{LossVariant, Method, Scenario};
use nclab_core::Error;

#[derive(Parser, Debug)]
#[command(name = "nclab", version, about = "Feature/classifier alignment lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate data, train into the terminal phase, save checkpoint and trace.
    Train(TrainArgs),
    /// Accuracy of the trained model on clean or shifted test data.
    Eval(EvalArgs),
    /// Per-sample FCA distances and the NC summary.
    Metrics(EvalArgs),
    /// Run an adaptation scenario and write one RunLog per seed.
    Adapt(AdaptArgs),
    /// Run an adaptation scenario once per grid cell.
    Sweep(AdaptArgs),
    /// Adapt with several methods and dump a 2-D projection of the features.
    Project(ProjectArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config; the built-in reference setup when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Directory written by `train`; supplies the default checkpoint and test data.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Replaces the model-init and training seeds of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// gaussian_noise, mean_shift, rotation, feature_scale or feature_dropout.
    #[arg(long, default_value = "gaussian_noise")]
    shift: ShiftKind,
    /// 0 evaluates clean data.
    #[arg(long, default_value_t = 0)]
    severity: u8,
    /// Shift seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// no_adapt, bn_adapt, tent or nctta; overrides the config.
    #[arg(long)]
    method: Option<Method>,
    /// infonce, l2 or triplet; overrides the config.
    #[arg(long)]
    variant: Option<LossVariant>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    repeats: u64,
    /// Grid such as `alpha=0:1:0.25,k=1:4`.
    #[arg(long)]
    sweep: Option<String>,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// mild, ctta or bs1.
    #[arg(long, default_value = "mild")]
    scenario: String,
    #[arg(long, default_value = "gaussian_noise")]
    shift: ShiftKind,
    /// Severity for mild and bs1 (default 3).
    #[arg(long)]
    severity: Option<u8>,
    /// Severity schedule for ctta (default 1,2,3,4,5).
    #[arg(long, value_delimiter = ',')]
    severities: Option<Vec<u8>>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// Comma-separated methods to compare.
    #[arg(long, value_delimiter = ',', default_value = "tent,nctta")]
    methods: Vec<Method>,
    #[arg(long, default_value = "gaussian_noise")]
    shift: ShiftKind,
    #[arg(long, default_value_t = 5)]
    severity: u8,
    /// unit (row-normalised features) or raw.
    #[arg(long, default_value = "unit", value_parser = parse_view)]
    view: FeatureView,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_view(s: &str) -> Result<FeatureView, String> {
    match s {
        "unit" => Ok(FeatureView::Unit),
        "raw" => Ok(FeatureView::Raw),
        _ => Err(format!("unknown view {s:?}; expected unit or raw")),
    }
}

impl ScenarioArgs {
    fn build(&self) -> Result<Scenario, Error> {
        let shift = self.shift;
        let severity = self.severity.unwrap_or(3);
        match self.scenario.as_str() {
            "mild" | "bs1" if self.severities.is_some() => {
                Err(Error::InvalidArgument("--severities applies to the ctta scenario; use --severity".into()))
            }
            "mild" => Ok(Scenario::Mild { shift, severity }),
            "bs1" => Ok(Scenario::Bs1 { shift, severity }),
            "ctta" if self.severity.is_some() => {
                Err(Error::InvalidArgument("--severity does not apply to ctta; use --severities".into()))
            }
            "ctta" => {
                Ok(Scenario::Ctta { shift, severities: self.severities.clone().unwrap_or_else(|| (1..=5).collect()) })
            }
            other => Err(Error::InvalidArgument(format!("unknown scenario {other:?}; expected mild, ctta or bs1"))),
        }
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::reference(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_or(&self, default: PathBuf) -> PathBuf {
        self.out.clone().unwrap_or(default)
    }
}

impl Inputs {
    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.run.join(CHECKPOINT_FILE))
    }

    fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.run.join(TEST_DATA_FILE))
    }

    fn load(&self) -> Result<(Model, Dataset, Vec<PathBuf>), Error> {
        let (ck, data) = (self.checkpoint_path(), self.data_path());
        let model = load_checkpoint(&ck)?;
        let test = load_dataset(&data)?;
        Ok((model, test, vec![ck, data]))
    }
}

fn print_json(v: &serde_json::Value) {
    // a closed stdout (e.g. piped into `head`) is not a failure of the run
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = a.common.config()?;
            if let Some(s) = a.seed {
                cfg.model.seed = s;
                cfg.train.seed = s;
            }
            let out = a.common.out_or(PathBuf::from("run"));
            let t = cmd_train(&cfg, &out)?;
            let last = t.trace.epochs.last();
            print_json(&json!({
                "out": out,
                "epochs": t.trace.epochs.len(),
                "final": last,
            }));
        }
        Command::Eval(a) => {
            let cfg = a.common.config()?;
            let (model, test, inputs) = a.inputs.load()?;
            let shift = shift_spec(a.shift, a.severity, a.seed)?;
            let out = a.common.out_or(a.inputs.run.join("eval"));
            let report = cmd_eval(&model, &test, shift.as_ref())?;
            std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let path = out.join("eval.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| io_err(&path, e))?;
            let mut mb = ManifestBuilder::new("eval", &cfg, shift.iter().map(|s| s.seed()).collect());
            mb.dataset(test.meta()).artifact("eval.json");
            for p in &inputs {
                mb.input(p);
            }
            mb.finish(&out)?;
            print_json(&serde_json::to_value(&report)?);
        }
        Command::Metrics(a) => {
            let cfg = a.common.config()?;
            let (model, test, inputs) = a.inputs.load()?;
            let shift = shift_spec(a.shift, a.severity, a.seed)?;
            let out = a.common.out_or(a.inputs.run.join("metrics"));
            let report = cmd_metrics(&cfg, &model, &test, shift.as_ref(), &out)?;
            record_inputs(&out, &inputs)?;
            print_json(&json!({ "out": out, "accuracy": report.accuracy, "nc": report.nc }));
        }
        Command::Adapt(a) => adapt(a, "adapt")?,
        Command::Sweep(a) => {
            if a.sweep.is_none() {
                return Err(Error::InvalidArgument("sweep needs --sweep SPEC".into()));
            }
            adapt(a, "sweep")?
        }
        Command::Project(a) => {
            let cfg = a.common.config()?;
            let (model, test, inputs) = a.inputs.load()?;
            let out = a.common.out_or(a.inputs.run.join("project"));
            let sc = Scenario::Mild { shift: a.shift, severity: a.severity };
            let p = cmd_project(&cfg, &model, &test, &sc, &a.methods, a.view, a.seed, &out)?;
            record_inputs(&out, &inputs)?;
            print_json(&json!({ "out": out, "view": p.view, "silhouette": p.silhouette }));
        }
    }
    Ok(())
}

fn adapt(a: AdaptArgs, name: &str) -> Result<(), Error> {
    let mut cfg = a.common.config()?;
    if let Some(m) = a.method {
        cfg.adapt.method = m;
    }
    if let Some(v) = a.variant {
        cfg.adapt.loss_variant = v;
    }
    let scenario = a.scenario.build()?;
    let (model, test, inputs) = a.inputs.load()?;
    let out = a.common.out_or(a.inputs.run.join(name));
    match &a.sweep {
        Some(text) => {
            if a.repeats != 1 {
                return Err(Error::InvalidArgument("--repeats cannot be combined with --sweep".into()));
            }
            let spec = SweepSpec::parse(text)?;
            let cells = cmd_sweep(&cfg, &model, &test, &scenario, &spec, a.seed, &out)?;
            record_inputs(&out, &inputs)?;
            let summary: Vec<_> = cells
                .iter()
                .map(|c| json!({ "cell": c.label, "accuracy": c.accuracy, "final_mean_gfca": c.final_mean_gfca }))
                .collect();
            print_json(&json!({ "out": out, "cells": summary }));
        }
        None => {
            if a.repeats == 0 {
                return Err(Error::InvalidArgument("--repeats must be at least 1".into()));
            }
            let seeds: Vec<u64> = (0..a.repeats).map(|i| a.seed + i).collect();
            let logs = cmd_adapt(&cfg, &model, &test, &scenario, &seeds, &out)?;
            record_inputs(&out, &inputs)?;
            let summary: Vec<_> = logs
                .iter()
                .map(|l| {
                    json!({
                        "seed": l.seed,
                        "accuracy": l.accuracy,
                        "final_mean_gfca": l.final_mean_gfca,
                        "segment_accuracies": l.segment_accuracies(),
                    })
                })
                .collect();
            print_json(&json!({ "out": out, "scenario": scenario.name(), "runs": summary }));
        }
    }
    Ok(())
}

fn shift_spec(kind: ShiftKind, severity: u8, seed: u64) -> Result<Option<ShiftSpec>, Error> {
    if severity == 0 {
        return Ok(None);
    }
    Ok(Some(ShiftSpec::new(kind, severity, seed)?))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Io { .. } => "io",
        Error::BadMagic { .. } | Error::UnsupportedVersion { .. } | Error::Truncated { .. } => "format",
        Error::MissingClasses(_) => "missing_classes",
        Error::AlreadyShifted { .. } => "already_shifted",
        Error::NonFinite(_) => "non_finite",
        Error::Json(_) | Error::Csv(_) => "serialization",
        _ => "internal",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{msg}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
