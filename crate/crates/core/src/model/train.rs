use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::nc_suite;
use crate::tensor::ops::argmax;
use crate::tensor::Rng;
use crate::Tape;

use super::{forward_on_tape, Mode, Model, Sgd, TapeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Minimum number of epochs.
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs to keep training after the first zero-error epoch.
    pub post_zero_epochs: usize,
    /// Hard cap when the post-zero budget pushes past `epochs`.
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-2,
            batch_size: 200,
            seed: 0,
            post_zero_epochs: 100,
            max_epochs: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.max_epochs < self.epochs {
            return bad("max_epochs must be >= epochs".into());
        }
        Ok(())
    }
}

/// Train-set measurements after one epoch, taken with running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub mean_gfca: f64,
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub nc4: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// First epoch (1-based) with 100% train accuracy.
    pub first_zero_error_epoch: Option<usize>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Cross-entropy training with mini-batch SGD into the terminal phase.
///
/// Runs at least `cfg.epochs` epochs, then extends (up to `max_epochs`)
/// until `post_zero_epochs` epochs have passed since the first zero-error
/// epoch. A trailing batch of one sample is skipped since batch statistics
/// need two rows.
pub fn train_to_tpt(mut model: Model, d: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    if d.dim() != model.params.input_dim() || d.num_classes() != model.params.num_classes() {
        return Err(Error::invalid(format!(
            "dataset (D={}, K={}) does not fit model (D={}, K={})",
            d.dim(),
            d.num_classes(),
            model.params.input_dim(),
            model.params.num_classes()
        )));
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut rng = Rng::derive(cfg.seed, 0x7472_6169_6e);
    let mut trace = TrainTrace::default();
    let mut epoch = 0;
    loop {
        epoch += 1;
        let order = rng.permutation(d.len());
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let (x, y) = d.batch(idx);
            let mut tape = Tape::new();
            let tm = TapeModel::register(&mut tape, &model.params, |_| true);
            let xv = tape.constant(x);
            let f = forward_on_tape(&mut tape, &tm, &model, xv, Mode::Train)?;
            let picks: Vec<(usize, usize)> = y.iter().enumerate().map(|(i, &c)| (i, c)).collect();
            let lp = tape.gather(f.log_p, &picks)?;
            let mean = tape.mean(lp);
            let loss = tape.scale(mean, -1.0);
            let value = tape.value(loss)[(0, 0)];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b} (lr {}); lower the learning rate",
                    cfg.lr
                )));
            }
            let grads = tape.backward(loss)?;
            if !grads.all_finite() {
                return Err(Error::NonFinite(format!("gradients at epoch {epoch}, batch {b} (lr {})", cfg.lr)));
            }
            model.norm.update(&f.stats, idx.len());
            opt.step(&mut model.params, tm.iter().map(|(id, v)| (id, grads.get(v).expect("trainable"))))?;
        }

        let rec = evaluate_epoch(&model, d, epoch)?;
        if rec.train_accuracy == 1.0 && trace.first_zero_error_epoch.is_none() {
            trace.first_zero_error_epoch = Some(epoch);
        }
        trace.epochs.push(rec);

        let target = match trace.first_zero_error_epoch {
            Some(e0) => cfg.epochs.max(e0 + cfg.post_zero_epochs),
            None => cfg.epochs,
        };
        if epoch >= target.min(cfg.max_epochs) {
            break;
        }
    }
    Ok((model, trace))
}

fn evaluate_epoch(model: &Model, d: &Dataset, epoch: usize) -> Result<EpochRecord> {
    let out = model.predict(d.features())?;
    let y = d.labels();
    let n = y.len() as f64;
    let correct = (0..y.len()).filter(|&i| argmax(out.z.row(i)) == y[i]).count();
    let loss = -(0..y.len()).map(|i| crate::tensor::ops::log_softmax(out.z.row(i))[y[i]]).sum::<f64>() / n;
    if !loss.is_finite() || !out.h.all_finite() {
        return Err(Error::NonFinite(format!("train-set evaluation after epoch {epoch}")));
    }
    let nc = nc_suite(&out.h, y, model.params.classifier())?;
    Ok(EpochRecord {
        epoch,
        train_accuracy: correct as f64 / n,
        train_loss: loss,
        mean_gfca: nc.nc3plus,
        nc1: nc.nc1,
        nc2: nc.nc2,
        nc3: nc.nc3,
        nc4: nc.nc4,
    })
}

/// One row per epoch: `epoch,train_accuracy,train_loss,mean_gfca,nc1,nc2,nc3,nc4`.
pub fn write_trace_csv(trace: &TrainTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &trace.epochs {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
