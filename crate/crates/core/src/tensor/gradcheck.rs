use crate::scalar::Scalar;

/// Central-difference gradient estimate of `f` at `params`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&[T]) -> T, params: &[T], step: T) -> Vec<T> {
    let mut x = params.to_vec();
    let two_h = step + step;
    (0..params.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

/// `|a - b|_2 / max(|a|_2, |b|_2, 1e-8)`; the floor keeps an all-zero pair at zero.
pub fn relative_error<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|p: &[f64]| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_: &[f64]| 4.2, &[1.0, -2.0, 0.5], 1e-5);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error::<f64>(&[0.0], &[0.0]), 0.0);
    }
}
