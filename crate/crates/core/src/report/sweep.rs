//! Grid sweeps over adaptation hyperparameters.
//!
//! Grammar: `name=start:stop[:step]` or `name=value`, axes separated by
//! commas. Ranges include both ends; the step defaults to 1.
//! `alpha=0:1:0.25,k=1:4` is a 5 x 4 grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tta::AdaptConfig;

const SWEEPABLE: &[&str] = &[
    "alpha",
    "epsilon",
    "k",
    "gamma_ent",
    "tau_ent",
    "nu",
    "eta",
    "tau_margin",
    "lr",
    "momentum",
    "batch_size",
    "nc_weight",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
}

fn number(s: &str, axis: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("sweep axis {axis}: {s:?} is not a finite number")))
}

impl SweepSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut axes: Vec<SweepAxis> = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, range) =
                part.split_once('=').ok_or_else(|| Error::Config(format!("sweep axis {part:?} is missing '='")))?;
            let name = name.trim();
            if !SWEEPABLE.contains(&name) {
                return Err(Error::Config(format!("cannot sweep {name:?}; sweepable keys are {SWEEPABLE:?}")));
            }
            if axes.iter().any(|a| a.name == name) {
                return Err(Error::Config(format!("sweep axis {name} given twice")));
            }
            let bits: Vec<&str> = range.split(':').collect();
            let values = match bits.as_slice() {
                [v] => vec![number(v, name)?],
                [a, b] | [a, b, _] => {
                    let (start, stop) = (number(a, name)?, number(b, name)?);
                    let step = match bits.get(2) {
                        Some(s) => number(s, name)?,
                        None => 1.0,
                    };
                    if step <= 0.0 || stop < start {
                        return Err(Error::Config(format!("sweep axis {name}: need start <= stop and step > 0")));
                    }
                    let n = ((stop - start) / step + 1e-9).floor() as usize;
                    (0..=n).map(|i| start + i as f64 * step).collect()
                }
                _ => return Err(Error::Config(format!("sweep axis {name}: bad range {range:?}"))),
            };
            axes.push(SweepAxis { name: name.to_string(), values });
        }
        if axes.is_empty() {
            return Err(Error::Config("empty sweep specification".into()));
        }
        Ok(Self { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in row-major order (last axis fastest).
    pub fn cells(&self) -> Vec<Vec<(String, f64)>> {
        let mut out = vec![Vec::new()];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |&v| {
                        let mut c = prefix.clone();
                        c.push((axis.name.clone(), v));
                        c
                    })
                })
                .collect();
        }
        out
    }
}

/// File-name friendly cell label, e.g. `alpha=0.25_k=2`.
pub fn cell_label(cell: &[(String, f64)]) -> String {
    cell.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("_")
}

fn count(name: &str, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Config(format!("{name} must be a whole number, got {v}")));
    }
    Ok(v as usize)
}

/// Overrides one sweepable key of `cfg`.
pub fn set_param(cfg: &mut AdaptConfig, name: &str, v: f64) -> Result<()> {
    match name {
        "alpha" => cfg.alpha = v,
        "epsilon" => cfg.epsilon = v,
        "k" => cfg.k = count(name, v)?,
        "gamma_ent" => cfg.gamma_ent = Some(v),
        "tau_ent" => cfg.tau_ent = Some(v),
        "nu" => cfg.nu = v,
        "eta" => cfg.eta = v,
        "tau_margin" => cfg.tau_margin = v,
        "lr" => cfg.lr = v,
        "momentum" => cfg.momentum = v,
        "batch_size" => cfg.batch_size = count(name, v)?,
        "nc_weight" => cfg.nc_weight = v,
        _ => return Err(Error::Config(format!("cannot sweep {name:?}"))),
    }
    Ok(())
}
