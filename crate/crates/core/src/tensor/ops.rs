//! Tape-free versions of the primitives, used for evaluation and as
//! reference values in tests.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matrix::norm2;

/// Norm below which a vector has no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Unit-norm copy of `v`.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = norm2(v);
    if !(n >= T::lit(DEGENERATE_NORM)) {
        return Err(Error::DegenerateVector { context: "l2_normalize".into(), norm: n.to_f64_lossy() });
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = max_of(z);
    let exps: Vec<T> = z.iter().map(|&x| (x - m).exp()).collect();
    let s = exps.iter().fold(T::zero(), |a, &x| a + x);
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = max_of(z);
    let lse = z.iter().fold(T::zero(), |a, &x| a + (x - m).exp()).ln() + m;
    z.iter().map(|&x| x - lse).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn max_of<T: Scalar>(z: &[T]) -> T {
    z.iter().fold(T::neg_infinity(), |m, &x| m.max(x))
}
