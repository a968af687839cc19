//! Class-level Neural Collapse measurements.
//!
//! The formulas follow the usual conventions of the Neural Collapse
//! literature:
//!
//! * NC1 = tr(Sigma_W Sigma_B^+) / K, with Sigma_W the within-class and
//!   Sigma_B the between-class covariance of the features (divide-by-N and
//!   divide-by-K respectively) and `^+` the Moore-Penrose pseudo-inverse.
//! * NC2 = std of the pairwise cosines of the globally centred class means
//!   plus the mean absolute deviation of those cosines from -1/(K-1).
//! * NC3 = || M/||M||_F - omega/||omega||_F ||_F with M the centred class means.
//! * NC4 = share of samples whose nearest class mean (Euclidean) matches the
//!   classifier's argmax.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::argmax;
use crate::tensor::{dot, norm2, Matrix};

use super::fca::fca_matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    pub nc1: f64,
    /// `nc2_std + nc2_etf_dev`.
    pub nc2: f64,
    pub nc2_std: f64,
    pub nc2_etf_dev: f64,
    pub nc3: f64,
    pub nc4: f64,
    /// Mean G-FCA over the batch.
    pub nc3plus: f64,
}

/// Frobenius distance between the Frobenius-normalised `m` and `omega`.
pub fn nc3_selfduality<T: Scalar>(m: &Matrix<T>, omega: &Matrix<T>) -> Result<T> {
    if m.shape() != omega.shape() {
        return Err(Error::Shape { op: "nc3_selfduality", left: m.shape(), right: omega.shape() });
    }
    let nm = m.frobenius_norm();
    let nw = omega.frobenius_norm();
    for (n, what) in [(nm, "class-mean matrix"), (nw, "classifier matrix")] {
        if !(n >= T::lit(crate::tensor::ops::DEGENERATE_NORM)) {
            return Err(Error::DegenerateVector { context: what.into(), norm: n.to_f64_lossy() });
        }
    }
    let diff = m.data().iter().zip(omega.data()).fold(T::zero(), |a, (&x, &w)| {
        let d = x / nm - w / nw;
        a + d * d
    });
    Ok(diff.sqrt())
}

/// Per-class means (K x L) and the global mean of all samples.
pub fn class_means(h: &Matrix<f64>, y: &[usize], k: usize) -> Result<(Matrix<f64>, Vec<f64>)> {
    if h.rows() != y.len() {
        return Err(Error::invalid(format!("{} feature rows but {} labels", h.rows(), y.len())));
    }
    let l = h.cols();
    let mut sums = Matrix::zeros(k, l);
    let mut counts = vec![0usize; k];
    for (row, &c) in h.iter_rows().zip(y) {
        if c >= k {
            return Err(Error::invalid(format!("label {c} out of range for {k} classes")));
        }
        counts[c] += 1;
        for (s, x) in sums.row_mut(c).iter_mut().zip(row) {
            *s += x;
        }
    }
    let missing: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }
    let global: Vec<f64> = h.col_sums().into_iter().map(|s| s / h.rows() as f64).collect();
    for c in 0..k {
        for s in sums.row_mut(c) {
            *s /= counts[c] as f64;
        }
    }
    Ok((sums, global))
}

/// NC1-NC4 plus mean G-FCA for features `h` with labels `y` under classifier `omega`.
pub fn nc_suite(h: &Matrix<f64>, y: &[usize], omega: &Matrix<f64>) -> Result<NcReport> {
    let k = omega.rows();
    let l = omega.cols();
    if h.cols() != l {
        return Err(Error::Shape { op: "nc_suite", left: h.shape(), right: omega.shape() });
    }
    let (means, global) = class_means(h, y, k)?;
    let centred = Matrix::from_fn(k, l, |c, j| means[(c, j)] - global[j]);

    // NC1
    let n = h.rows() as f64;
    let mut sw = DMatrix::<f64>::zeros(l, l);
    for (row, &c) in h.iter_rows().zip(y) {
        let d = nalgebra::DVector::from_iterator(l, row.iter().zip(means.row(c)).map(|(x, m)| x - m));
        sw.ger(1.0 / n, &d, &d, 1.0);
    }
    let mut sb = DMatrix::<f64>::zeros(l, l);
    for c in 0..k {
        let d = nalgebra::DVector::from_row_slice(centred.row(c));
        sb.ger(1.0 / k as f64, &d, &d, 1.0);
    }
    let nc1 = (sw * pinv_symmetric(sb)).trace() / k as f64;

    // NC2
    let mut cosines = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in 0..a {
            let (ra, rb) = (centred.row(a), centred.row(b));
            let denom = norm2(ra) * norm2(rb);
            if !(denom > 0.0) {
                return Err(Error::DegenerateVector {
                    context: format!("centred class mean {}", if norm2(ra) > 0.0 { b } else { a }),
                    norm: 0.0,
                });
            }
            cosines.push(dot(ra, rb) / denom);
        }
    }
    let m = cosines.len() as f64;
    let mean_cos = cosines.iter().sum::<f64>() / m;
    let nc2_std = (cosines.iter().map(|c| (c - mean_cos).powi(2)).sum::<f64>() / m).sqrt();
    let target = -1.0 / (k as f64 - 1.0);
    let nc2_etf_dev = cosines.iter().map(|c| (c - target).abs()).sum::<f64>() / m;

    let nc3 = nc3_selfduality(&centred, omega)?;

    // NC4
    let z = h.matmul_transposed(omega)?;
    let agree = h
        .iter_rows()
        .zip(z.iter_rows())
        .filter(|(row, logits)| {
            let dists: Vec<f64> =
                (0..k).map(|c| -row.iter().zip(means.row(c)).map(|(x, m)| (x - m).powi(2)).sum::<f64>()).collect();
            argmax(&dists) == argmax(logits)
        })
        .count();
    let nc4 = agree as f64 / n;

    let d = fca_matrix(h, omega)?;
    let nc3plus = y.iter().enumerate().map(|(i, &c)| d[(i, c)]).sum::<f64>() / n;

    Ok(NcReport { nc1, nc2: nc2_std + nc2_etf_dev, nc2_std, nc2_etf_dev, nc3, nc4, nc3plus })
}

/// Pseudo-inverse of a symmetric PSD matrix via its eigendecomposition;
/// eigenvalues below `1e-10 * max` count as zero.
fn pinv_symmetric(a: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = max * 1e-10;
    let inv = eig.eigenvalues.map(|v| if v.abs() > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
