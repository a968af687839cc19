//! 2-D PCA projections and silhouette scores for cluster-separation plots.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::l2_normalize;
use crate::Matrix;

/// Which feature vectors are projected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureView {
    /// Rows scaled to unit norm, the geometry FCA distances live on.
    #[default]
    Unit,
    /// Features as produced by the extractor.
    Raw,
}

impl FeatureView {
    pub fn apply(self, h: &Matrix) -> Result<Matrix> {
        match self {
            FeatureView::Raw => Ok(h.clone()),
            FeatureView::Unit => {
                let mut out = h.clone();
                for i in 0..h.rows() {
                    let u = l2_normalize(h.row(i))
                        .map_err(|_| Error::invalid(format!("sample {i} has a degenerate feature vector")))?;
                    out.row_mut(i).copy_from_slice(&u);
                }
                Ok(out)
            }
        }
    }
}

/// One projected sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub method: String,
    pub sample_id: usize,
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub predicted: usize,
}

/// Projects rows of `h` onto their top two principal axes.
///
/// Each axis is signed so that its largest-magnitude loading is positive,
/// which makes the output a function of the data alone.
pub fn pca2(h: &Matrix) -> Result<Matrix> {
    let (n, d) = h.shape();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let mean: Vec<f64> = h.col_sums().into_iter().map(|s| s / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| h[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::with_capacity(2);
    for &c in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    // one-dimensional features leave the second axis at zero
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    Ok(Matrix::from_fn(n, 2, |i, k| (0..d).map(|j| centered[(i, j)] * axes[k][j]).sum()))
}

/// Mean silhouette coefficient with Euclidean distances.
///
/// Samples in singleton clusters score 0. Needs at least two labels present.
pub fn silhouette(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} points but {} labels", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let dist = |a: usize, b: usize| {
        points.row(a).iter().zip(points.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Projects one method's features; `predicted` comes from the same forward pass.
pub fn project_method(
    method: &str,
    h: &Matrix,
    view: FeatureView,
    labels: &[usize],
    predicted: &[usize],
) -> Result<Vec<ProjectionRow>> {
    let xy = pca2(&view.apply(h)?)?;
    if !xy.all_finite() {
        return Err(Error::NonFinite(format!("projection of {method}")));
    }
    Ok((0..h.rows())
        .map(|i| ProjectionRow {
            method: method.to_string(),
            sample_id: i,
            x: xy[(i, 0)],
            y: xy[(i, 1)],
            label: labels[i],
            predicted: predicted[i],
        })
        .collect())
}

/// Silhouette of one method's rows in a dump, using true labels.
pub fn dump_silhouette(rows: &[ProjectionRow], method: &str) -> Result<f64> {
    let mine: Vec<&ProjectionRow> = rows.iter().filter(|r| r.method == method).collect();
    let pts = Matrix::from_fn(mine.len(), 2, |i, c| if c == 0 { mine[i].x } else { mine[i].y });
    let labels: Vec<usize> = mine.iter().map(|r| r.label).collect();
    silhouette(&pts, &labels)
}

pub fn write_projection_csv(rows: &[ProjectionRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_projection_csv(path: &Path) -> Result<Vec<ProjectionRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
