use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::{argmax, DEGENERATE_NORM};
use crate::tensor::{dot, norm2, Matrix};

/// Distances from one unit-normalised feature to every unit-normalised
/// classifier row. Entries lie in [0, 2].
#[derive(Clone, Debug, PartialEq)]
pub struct FcaVector<T> {
    d: Vec<T>,
}

impl<T: Scalar> FcaVector<T> {
    /// Wraps precomputed distances, checking range and finiteness.
    pub fn new(d: Vec<T>) -> Result<Self> {
        let two = T::lit(2.0);
        if let Some(bad) = d.iter().find(|&&x| !(x >= T::zero() && x <= two)) {
            return Err(Error::invalid(format!("FCA distance {bad} outside [0, 2]")));
        }
        Ok(Self { d })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.d
    }
}

fn unit_rows<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = norm2(m.row(i));
        if !(n >= T::lit(DEGENERATE_NORM)) {
            return Err(Error::DegenerateVector { context: format!("{what} {i}"), norm: n.to_f64_lossy() });
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(out)
}

fn unit<T: Scalar>(h: &[T], what: &str) -> Result<Vec<T>> {
    let n = norm2(h);
    if !(n >= T::lit(DEGENERATE_NORM)) {
        return Err(Error::DegenerateVector { context: what.into(), norm: n.to_f64_lossy() });
    }
    Ok(h.iter().map(|&x| x / n).collect())
}

/// `d_j = || h/|h| - w_j/|w_j| ||`, computed by normalising and subtracting.
pub fn fca_distances<T: Scalar>(h: &[T], omega: &Matrix<T>) -> Result<FcaVector<T>> {
    check_width(h.len(), omega)?;
    let hn = unit(h, "feature vector")?;
    let wn = unit_rows(omega, "classifier row")?;
    Ok(FcaVector { d: direct_row(&hn, &wn) })
}

/// The same distances through `sqrt(2 - 2 cos(h, w_j))`.
///
/// Kept as an independent route so the two can be checked against each other.
pub fn fca_distances_via_cosine<T: Scalar>(h: &[T], omega: &Matrix<T>) -> Result<FcaVector<T>> {
    check_width(h.len(), omega)?;
    let hn = norm2(h);
    if !(hn >= T::lit(DEGENERATE_NORM)) {
        return Err(Error::DegenerateVector { context: "feature vector".into(), norm: hn.to_f64_lossy() });
    }
    let mut d = Vec::with_capacity(omega.rows());
    for j in 0..omega.rows() {
        let w = omega.row(j);
        let wn = norm2(w);
        if !(wn >= T::lit(DEGENERATE_NORM)) {
            return Err(Error::DegenerateVector { context: format!("classifier row {j}"), norm: wn.to_f64_lossy() });
        }
        let cos = (dot(h, w) / (hn * wn)).max(-T::one()).min(T::one());
        d.push((T::lit(2.0) - T::lit(2.0) * cos).max(T::zero()).sqrt());
    }
    Ok(FcaVector { d })
}

/// FCA distances for a whole batch, B x K. Errors name the offending sample.
pub fn fca_matrix<T: Scalar>(h: &Matrix<T>, omega: &Matrix<T>) -> Result<Matrix<T>> {
    check_width(h.cols(), omega)?;
    let hn = unit_rows(h, "sample")?;
    let wn = unit_rows(omega, "classifier row")?;
    let mut out = Matrix::zeros(h.rows(), omega.rows());
    for i in 0..h.rows() {
        out.row_mut(i).copy_from_slice(&direct_row(hn.row(i), &wn));
    }
    Ok(out)
}

fn direct_row<T: Scalar>(hn: &[T], wn: &Matrix<T>) -> Vec<T> {
    let two = T::lit(2.0);
    wn.iter_rows()
        .map(|w| {
            let sq = hn.iter().zip(w).fold(T::zero(), |a, (&x, &y)| a + (x - y) * (x - y));
            sq.sqrt().min(two)
        })
        .collect()
}

fn check_width<T: Scalar>(width: usize, omega: &Matrix<T>) -> Result<()> {
    if width != omega.cols() {
        return Err(Error::Shape { op: "fca_distances", left: (1, width), right: omega.shape() });
    }
    Ok(())
}

/// Distance to the ground-truth class.
pub fn gfca<T: Scalar>(d: &[T], y: usize) -> T {
    d[y]
}

/// Distance to the predicted class; ties in `p` pick the lowest index.
pub fn pfca<T: Scalar>(d: &[T], p: &[T]) -> T {
    d[argmax(p)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn omega() -> Matrix<f64> {
        Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 0.5]]).unwrap()
    }

    #[test]
    fn aligned_orthogonal_antipodal() {
        let d = fca_distances(&[3.0, 0.0, 0.0], &omega()).unwrap();
        assert_eq!(d.as_slice()[0], 0.0);
        assert!((d.as_slice()[1] - 2f64.sqrt()).abs() < 1e-15);
        let d = fca_distances(&[0.0, -1.0, 0.0], &omega()).unwrap();
        assert_eq!(d.as_slice()[1], 2.0);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = Rng::new(21);
        let h: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let w = Matrix::from_fn(5, 8, |_, _| rng.normal());
        let d = fca_distances(&h, &w).unwrap();
        let hn: f64 = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..5 {
            let wn: f64 = w.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
            let naive: f64 = (0..8).map(|c| (h[c] / hn - w[(j, c)] / wn).powi(2)).sum::<f64>().sqrt();
            assert!((d.as_slice()[j] - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_name_the_row() {
        let mut w = omega();
        w.row_mut(2).fill(0.0);
        let err = fca_distances(&[1.0, 1.0, 1.0], &w).unwrap_err();
        assert!(err.to_string().contains("classifier row 2"), "{err}");
        let h = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0; 3]]).unwrap();
        let err = fca_matrix(&h, &omega()).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{err}");
        assert!(fca_distances(&[0.0; 3], &omega()).is_err());
    }

    #[test]
    fn gfca_and_pfca_read_entries() {
        let d = [0.1, 1.9];
        assert_eq!(gfca(&d, 0), 0.1);
        assert_eq!(pfca(&d, &[0.2, 0.8]), 1.9);
        assert_eq!(pfca(&d, &[0.5, 0.5]), 0.1);
        assert_eq!(gfca(&d, 1), pfca(&d, &[0.3, 0.7]));
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = Rng::new(2);
        let h = Matrix::from_fn(4, 6, |_, _| rng.normal());
        let w = Matrix::from_fn(3, 6, |_, _| rng.normal());
        let m = fca_matrix(&h, &w).unwrap();
        for i in 0..4 {
            assert_eq!(m.row(i), fca_distances(h.row(i), &w).unwrap().as_slice());
        }
    }

    #[test]
    fn works_in_single_precision() {
        let w = Matrix::<f32>::identity(3);
        let d = fca_distances(&[0.0f32, 0.0, 2.0], &w).unwrap();
        assert!((d.as_slice()[0] - 2f32.sqrt()).abs() < 1e-6);
        assert_eq!(d.as_slice()[2], 0.0);
    }

    proptest! {
        #[test]
        fn routes_agree_and_stay_in_range(
            seed in any::<u64>(),
            dim in 2usize..12,
            k in 2usize..6,
        ) {
            let mut rng = Rng::new(seed);
            let h: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let w = Matrix::from_fn(k, dim, |_, _| rng.normal());
            let a = fca_distances(&h, &w).unwrap();
            let b = fca_distances_via_cosine(&h, &w).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((0.0..=2.0).contains(x));
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn invariant_to_positive_rescaling(
            seed in any::<u64>(),
            c1 in 1e-3f64..1e3,
            logs in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let mut rng = Rng::new(seed);
            let h: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let w = Matrix::from_fn(4, 5, |_, _| rng.normal());
            let hs: Vec<f64> = h.iter().map(|x| x * c1).collect();
            let ws = Matrix::from_fn(4, 5, |i, j| w[(i, j)] * logs[i].exp());
            let a = fca_distances(&h, &w).unwrap();
            let b = fca_distances(&hs, &ws).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
