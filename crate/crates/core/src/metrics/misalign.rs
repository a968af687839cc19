use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::argmax;
use crate::tensor::Matrix;
use crate::tta::entropy;

use super::fca::fca_matrix;

/// Groups with fewer samples than this are flagged low-confidence.
pub const LOW_CONFIDENCE_COUNT: usize = 5;

/// Mean and (population) variance of G-FCA and P-FCA over one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean_gfca: f64,
    pub var_gfca: f64,
    pub mean_pfca: f64,
    pub var_pfca: f64,
    pub low_confidence: bool,
}

/// Correct/wrong split of a batch. A group with no samples is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentStats {
    pub total: usize,
    pub correct: Option<GroupStats>,
    pub wrong: Option<GroupStats>,
}

impl MisalignmentStats {
    pub fn correct_count(&self) -> usize {
        self.correct.as_ref().map_or(0, |g| g.count)
    }

    pub fn wrong_count(&self) -> usize {
        self.wrong.as_ref().map_or(0, |g| g.count)
    }

    /// `mean G-FCA - mean P-FCA` on misclassified samples.
    pub fn wrong_gap(&self) -> Option<f64> {
        self.wrong.as_ref().map(|w| w.mean_gfca - w.mean_pfca)
    }
}

/// One row of the per-sample export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: usize,
    pub y: usize,
    pub y_hat: usize,
    pub correct: bool,
    pub gfca: f64,
    pub pfca: f64,
    pub entropy: f64,
}

/// Per-sample G-FCA, P-FCA, prediction and entropy.
pub fn sample_metrics(
    h: &Matrix<f64>,
    omega: &Matrix<f64>,
    y: &[usize],
    p: &Matrix<f64>,
) -> Result<Vec<SampleMetrics>> {
    if h.rows() != y.len() || p.rows() != y.len() {
        return Err(Error::invalid(format!(
            "batch sizes disagree: {} features, {} labels, {} probability rows",
            h.rows(),
            y.len(),
            p.rows()
        )));
    }
    if p.cols() != omega.rows() {
        return Err(Error::Shape { op: "sample_metrics", left: p.shape(), right: omega.shape() });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= omega.rows()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let d = fca_matrix(h, omega)?;
    Ok((0..y.len())
        .map(|i| {
            let y_hat = argmax(p.row(i));
            SampleMetrics {
                sample_id: i,
                y: y[i],
                y_hat,
                correct: y_hat == y[i],
                gfca: d[(i, y[i])],
                pfca: d[(i, y_hat)],
                entropy: entropy(p.row(i)),
            }
        })
        .collect())
}

/// Aggregates per-sample rows into correct/wrong groups.
pub fn group_stats(rows: &[SampleMetrics]) -> MisalignmentStats {
    let summarize = |want: bool| {
        let g: Vec<&SampleMetrics> = rows.iter().filter(|r| r.correct == want).collect();
        if g.is_empty() {
            return None;
        }
        let (mg, vg) = mean_var(g.iter().map(|r| r.gfca));
        let (mp, vp) = mean_var(g.iter().map(|r| r.pfca));
        Some(GroupStats {
            count: g.len(),
            mean_gfca: mg,
            var_gfca: vg,
            mean_pfca: mp,
            var_pfca: vp,
            low_confidence: g.len() < LOW_CONFIDENCE_COUNT,
        })
    };
    MisalignmentStats { total: rows.len(), correct: summarize(true), wrong: summarize(false) }
}

pub fn misalignment_stats(
    h: &Matrix<f64>,
    omega: &Matrix<f64>,
    y: &[usize],
    p: &Matrix<f64>,
) -> Result<MisalignmentStats> {
    Ok(group_stats(&sample_metrics(h, omega, y, p)?))
}

/// Writes rows as CSV with header
/// `sample_id,y,y_hat,correct,gfca,pfca,entropy`.
pub fn write_sample_csv(rows: &[SampleMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sample_csv(path: &Path) -> Result<Vec<SampleMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
