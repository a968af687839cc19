use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::fca_matrix;
use crate::model::{forward_on_tape, Mode, Model, ParamId, Sgd, TapeModel};
use crate::tensor::norm2;
use crate::tensor::ops::{argmax, DEGENERATE_NORM};
use crate::{Matrix, Tape};

use super::config::{AdaptConfig, Method, Objective, UpdatePolicy};
use super::objective::{plan_batch, total_loss_with_plan, unit_classifier};

/// Diagnostics of one adaptation step. Accuracy and FCA means come from the
/// forward pass taken before the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub segment: usize,
    pub batch_size: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Samples that entered the loss.
    pub pass_count: usize,
    pub degenerate_count: usize,
    /// Mean weight over passing samples (0 when none pass).
    pub mean_lambda: f64,
    /// Mean entropy over the whole batch.
    pub mean_l_ent: f64,
    /// Mean alignment loss over passing samples (0 when not computed).
    pub mean_l_nc: f64,
    pub mean_gfca: f64,
    pub mean_pfca: f64,
    pub loss: f64,
    pub updated: bool,
    /// Update skipped because the loss or a gradient was not finite.
    pub skipped_non_finite: bool,
}

/// Online adaptation state: the model being adapted plus optimiser memory.
#[derive(Clone, Debug)]
pub struct Adapter {
    model: Model,
    cfg: AdaptConfig,
    objective: Option<Objective>,
    opt: Sgd,
    omega_unit: Matrix,
    eval_statistics: bool,
    steps: usize,
}

impl Adapter {
    pub fn new(model: Model, cfg: AdaptConfig) -> Result<Self> {
        let k = model.params.num_classes();
        cfg.validate(Some(k))?;
        let omega_unit = unit_classifier(model.params.classifier())?;
        Ok(Self {
            objective: cfg.objective(k),
            opt: Sgd::new(cfg.lr, cfg.momentum, 0.0),
            model,
            cfg,
            omega_unit,
            eval_statistics: false,
            steps: 0,
        })
    }

    /// Forces running-statistics forwards (used for single-sample streams).
    ///
    /// `bn_adapt` has nothing left to do without batch statistics and is rejected.
    pub fn use_eval_statistics(mut self) -> Result<Self> {
        if self.cfg.method == Method::BnAdapt {
            return Err(Error::Config("bn_adapt needs batch statistics and cannot run with eval statistics".into()));
        }
        self.eval_statistics = true;
        Ok(self)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn trainable(&self, id: ParamId) -> bool {
        match (self.cfg.update_policy, id) {
            (_, ParamId::Classifier) => false,
            (UpdatePolicy::AffineOnly, id) => id.is_affine(),
            (UpdatePolicy::ExtractorAll, _) => true,
        }
    }

    fn mode(&self, batch: usize) -> Mode {
        if self.cfg.method == Method::NoAdapt || self.eval_statistics || batch < 2 {
            Mode::Eval
        } else {
            Mode::Train
        }
    }

    /// One online step: forward, log predictions, then (for gradient
    /// methods) a single descent step on the objective. Batch statistics
    /// are used for the forward but never folded into the running ones.
    pub fn adapt_step(&mut self, x: &Matrix, y: &[usize], segment: usize) -> Result<StepLog> {
        let b = x.rows();
        if b == 0 || y.len() != b {
            return Err(Error::invalid(format!("batch of {b} rows with {} labels", y.len())));
        }
        let mut tape = Tape::new();
        let tm =
            TapeModel::register(&mut tape, &self.model.params, |id| self.objective.is_some() && self.trainable(id));
        let xv = tape.constant(x.clone());
        let f = forward_on_tape(&mut tape, &tm, &self.model, xv, self.mode(b))?;
        let h = tape.value(f.h).clone();
        let z = tape.value(f.z).clone();
        let log_p = tape.value(f.log_p).clone();

        let preds: Vec<usize> = (0..b).map(|i| argmax(z.row(i))).collect();
        let correct = preds.iter().zip(y).filter(|(p, t)| p == t).count();
        let (mean_gfca, mean_pfca, degenerate) = fca_means(&h, &self.omega_unit, y, &preds)?;
        let mean_l_ent = (0..b)
            .map(|i| {
                let p: Vec<f64> = log_p.row(i).iter().map(|v| v.exp()).collect();
                super::entropy(&p)
            })
            .sum::<f64>()
            / b as f64;

        let mut log = StepLog {
            step: self.steps,
            segment,
            batch_size: b,
            correct,
            accuracy: correct as f64 / b as f64,
            pass_count: 0,
            degenerate_count: degenerate,
            mean_lambda: 0.0,
            mean_l_ent,
            mean_l_nc: 0.0,
            mean_gfca,
            mean_pfca,
            loss: 0.0,
            updated: false,
            skipped_non_finite: false,
        };
        self.steps += 1;

        let Some(obj) = self.objective.clone() else {
            return Ok(log);
        };
        let plan = plan_batch(&h, &log_p, self.model.params.classifier(), &obj)?;
        let passed = plan.passed();
        log.pass_count = passed.len();
        if !passed.is_empty() {
            log.mean_lambda = passed.iter().map(|&i| plan.samples[i].lambda).sum::<f64>() / passed.len() as f64;
        }
        let parts = total_loss_with_plan(&mut tape, f.h, f.log_p, &self.omega_unit, &plan, &obj)?;
        if let Some(l) = parts.l_nc {
            log.mean_l_nc = tape.value(l).sum() / passed.len() as f64;
        }
        let Some(loss) = parts.loss else {
            return Ok(log);
        };
        log.loss = tape.value(loss)[(0, 0)];
        if !log.loss.is_finite() {
            log.skipped_non_finite = true;
            return Ok(log);
        }
        let grads = tape.backward(loss)?;
        if !grads.all_finite() {
            log.skipped_non_finite = true;
            return Ok(log);
        }
        let classifier_before = self.model.params.classifier().clone();
        let updates: Vec<_> = tm
            .iter()
            .filter(|&(id, _)| self.trainable(id))
            .map(|(id, v)| (id, grads.get(v).expect("trainable parameter")))
            .collect();
        self.opt.step(&mut self.model.params, updates)?;
        debug_assert_eq!(&classifier_before, self.model.params.classifier());
        log.updated = true;
        Ok(log)
    }
}

/// Batch means of G-FCA and P-FCA over non-degenerate rows, and the number
/// of degenerate rows.
fn fca_means(h: &Matrix, omega_unit: &Matrix, y: &[usize], preds: &[usize]) -> Result<(f64, f64, usize)> {
    let ok: Vec<usize> = (0..h.rows()).filter(|&i| norm2(h.row(i)) >= DEGENERATE_NORM).collect();
    let degenerate = h.rows() - ok.len();
    if ok.is_empty() {
        return Ok((0.0, 0.0, degenerate));
    }
    let d = fca_matrix(&h.select_rows(&ok), omega_unit)?;
    let n = ok.len() as f64;
    let g = ok.iter().enumerate().map(|(r, &i)| d[(r, y[i])]).sum::<f64>() / n;
    let p = ok.iter().enumerate().map(|(r, &i)| d[(r, preds[i])]).sum::<f64>() / n;
    Ok((g, p, degenerate))
}
