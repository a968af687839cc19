//! Per-sample pieces of the adaptation objective and their assembly on a tape.

use crate::error::{Error, Result};
use crate::metrics::{fca_distances, fca_matrix};
use crate::scalar::Scalar;
use crate::tensor::ops::{argmax, DEGENERATE_NORM};
use crate::tensor::{norm2, Var};
use crate::{Matrix, Tape};

use super::config::{LossVariant, Objective};

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter().fold(T::zero(), |acc, &x| if x > T::zero() { acc - x * x.ln() } else { acc })
}

/// `true` where the entropy is strictly below `gamma_ent`.
pub fn entropy_filter(entropies: &[f64], gamma_ent: f64) -> Vec<bool> {
    entropies.iter().map(|&h| h < gamma_ent).collect()
}

/// Class scores blending geometry and confidence, and the top-k classes.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridTarget {
    /// `(1 - alpha) exp(-d / epsilon) + alpha p`; not renormalised.
    pub y_tilde: Vec<f64>,
    /// Classes by descending score, lowest index first on ties.
    pub order: Vec<usize>,
    /// First `k` entries of `order`.
    pub target_set: Vec<usize>,
}

/// `k` is clamped to the number of classes.
pub fn hybrid_target(d: &[f64], p: &[f64], alpha: f64, epsilon: f64, k: usize) -> HybridTarget {
    let y_tilde: Vec<f64> =
        d.iter().zip(p).map(|(&dj, &pj)| (1.0 - alpha) * (-dj / epsilon).exp() + alpha * pj).collect();
    let mut order: Vec<usize> = (0..y_tilde.len()).collect();
    order.sort_by(|&a, &b| y_tilde[b].total_cmp(&y_tilde[a]).then(a.cmp(&b)));
    let target_set = order[..k.min(order.len())].to_vec();
    HybridTarget { y_tilde, order, target_set }
}

/// `exp(-(l_ent - tau_ent)) + nu / (1 + eta * pfca)`. No clipping is applied.
pub fn sample_weight(l_ent: f64, pfca: f64, tau_ent: f64, nu: f64, eta: f64) -> f64 {
    (-(l_ent - tau_ent)).exp() + nu / (1.0 + eta * pfca)
}

fn check_targets(k_total: usize, targets: &[usize], variant: LossVariant) -> Result<()> {
    if targets.is_empty() || targets.len() > k_total {
        return Err(Error::invalid(format!("target set size {} outside [1, {k_total}]", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&j| j >= k_total) {
        return Err(Error::invalid(format!("target class {bad} out of range")));
    }
    if targets.len() == k_total && variant != LossVariant::InfoNce {
        return Err(Error::invalid(format!("{variant} loss needs at least one negative class")));
    }
    Ok(())
}

/// Alignment loss as a function of one sample's FCA distances.
///
/// InfoNCE works on cosines, recovered here as `1 - d^2 / 2`.
pub fn loss_nc_from_distances(d: &[f64], targets: &[usize], variant: LossVariant, tau_margin: f64) -> Result<f64> {
    let k = d.len();
    check_targets(k, targets, variant)?;
    let in_t = |j: usize| targets.contains(&j);
    let t = targets.len() as f64;
    Ok(match variant {
        LossVariant::InfoNce => {
            let e: Vec<f64> = d.iter().map(|&x| (1.0 - 0.5 * x * x).exp()).collect();
            let num: f64 = targets.iter().map(|&j| e[j]).sum::<f64>() / t;
            let den: f64 = e.iter().sum();
            -(num / den).ln()
        }
        LossVariant::L2 => {
            let pos = targets.iter().map(|&j| d[j]).sum::<f64>() / t;
            let neg = (0..k).filter(|&j| !in_t(j)).map(|j| d[j]).sum::<f64>() / (k as f64 - t);
            pos - neg
        }
        LossVariant::Triplet => {
            let pos = targets.iter().map(|&j| d[j]).sum::<f64>() / t;
            let min_neg = (0..k).filter(|&j| !in_t(j)).map(|j| d[j]).fold(f64::INFINITY, f64::min);
            (pos - min_neg + tau_margin).max(0.0)
        }
    })
}

/// Alignment loss of feature `h` against classifier `omega` for target set `targets`.
pub fn loss_nc(h: &[f64], omega: &Matrix, targets: &[usize], variant: LossVariant, tau_margin: f64) -> Result<f64> {
    let d = fca_distances(h, omega)?;
    loss_nc_from_distances(d.as_slice(), targets, variant, tau_margin)
}

/// Rows of `omega` scaled to unit norm.
pub fn unit_classifier(omega: &Matrix) -> Result<Matrix> {
    let mut out = omega.clone();
    for j in 0..omega.rows() {
        let n = norm2(omega.row(j));
        if !(n >= DEGENERATE_NORM) {
            return Err(Error::DegenerateVector { context: format!("classifier row {j}"), norm: n });
        }
        for v in out.row_mut(j) {
            *v /= n;
        }
    }
    Ok(out)
}

/// Records the alignment loss of every row of `h` (B x L); returns B x 1.
///
/// `omega_unit` is the row-normalised classifier and enters as a constant.
pub fn loss_nc_rows(
    tape: &mut Tape,
    h: Var,
    omega_unit: &Matrix,
    targets: &[Vec<usize>],
    variant: LossVariant,
    tau_margin: f64,
) -> Result<Var> {
    let (b, _) = tape.shape(h);
    let k = omega_unit.rows();
    if targets.len() != b {
        return Err(Error::invalid(format!("{} target sets for {b} rows", targets.len())));
    }
    for t in targets {
        check_targets(k, t, variant)?;
    }
    let hn = tape.l2_normalize_rows(h)?;
    let wt = tape.constant(omega_unit.transpose());
    let cos = tape.matmul(hn, wt)?;
    let indicator = |value_in: &dyn Fn(usize) -> f64, value_out: &dyn Fn(usize) -> f64| {
        Matrix::from_fn(b, k, |i, j| if targets[i].contains(&j) { value_in(i) } else { value_out(i) })
    };
    match variant {
        LossVariant::InfoNce => {
            let e = tape.exp(cos);
            let mask = tape.constant(indicator(&|_| 1.0, &|_| 0.0));
            let masked = tape.mul(e, mask)?;
            let num = tape.row_sum(masked);
            let den = tape.row_sum(e);
            let log_den = tape.log(den);
            let log_num = tape.log(num);
            let diff = tape.sub(log_den, log_num)?;
            let ln_t = tape.constant(Matrix::from_fn(b, 1, |i, _| (targets[i].len() as f64).ln()));
            tape.add(diff, ln_t)
        }
        LossVariant::L2 | LossVariant::Triplet => {
            let m2 = tape.scale(cos, -2.0);
            let two_minus = tape.add_scalar(m2, 2.0);
            // Rounding can push 2 - 2cos a hair below zero for aligned rows.
            let clamped = tape.relu(two_minus);
            let d = tape.sqrt(clamped);
            let pos_w = |i: usize| 1.0 / targets[i].len() as f64;
            if variant == LossVariant::L2 {
                let coef = tape.constant(indicator(&pos_w, &|i| -1.0 / (k - targets[i].len()) as f64));
                let weighted = tape.mul(d, coef)?;
                Ok(tape.row_sum(weighted))
            } else {
                let coef = tape.constant(indicator(&pos_w, &|_| 0.0));
                let weighted = tape.mul(d, coef)?;
                let pos = tape.row_sum(weighted);
                let neg_d = tape.scale(d, -1.0);
                let negatives: Vec<Vec<usize>> =
                    targets.iter().map(|t| (0..k).filter(|j| !t.contains(j)).collect()).collect();
                let neg_of_min = tape.row_max_over(neg_d, &negatives)?;
                let gap = tape.add(pos, neg_of_min)?;
                let shifted = tape.add_scalar(gap, tau_margin);
                Ok(tape.relu(shifted))
            }
        }
    }
}

/// Detached per-sample decisions of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDecision {
    pub entropy: f64,
    /// Feature norm below 1e-12; such samples never pass.
    pub degenerate: bool,
    pub passed: bool,
    /// 1 when weighting is off; 0 for samples that did not pass.
    pub lambda: f64,
    pub target_set: Vec<usize>,
    pub pfca: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub samples: Vec<SampleDecision>,
}

impl BatchPlan {
    pub fn passed(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].passed).collect()
    }
}

/// Computes filter mask, target sets and weights from forward values.
pub fn plan_batch(h: &Matrix, log_p: &Matrix, omega: &Matrix, obj: &Objective) -> Result<BatchPlan> {
    let b = h.rows();
    if log_p.rows() != b || log_p.cols() != omega.rows() {
        return Err(Error::Shape { op: "plan_batch", left: log_p.shape(), right: (b, omega.rows()) });
    }
    let needs_geometry = obj.nc_weight != 0.0 || obj.use_weight;
    let omega_unit = unit_classifier(omega)?;
    let mut samples = Vec::with_capacity(b);
    for i in 0..b {
        let p: Vec<f64> = log_p.row(i).iter().map(|v| v.exp()).collect();
        let ent = entropy(&p);
        let degenerate = !(norm2(h.row(i)) >= DEGENERATE_NORM);
        let mut passed = obj.gamma_ent.map_or(true, |g| ent < g);
        let (mut target_set, mut pfca) = (Vec::new(), None);
        if needs_geometry {
            if degenerate {
                passed = false;
            } else {
                let d = fca_matrix(&h.select_rows(&[i]), &omega_unit)?;
                let d = d.row(0);
                pfca = Some(d[argmax(&p)]);
                target_set = hybrid_target(d, &p, obj.alpha, obj.epsilon, obj.k).target_set;
            }
        }
        let lambda = if !passed {
            0.0
        } else if obj.use_weight {
            sample_weight(ent, pfca.unwrap_or(0.0), obj.tau_ent, obj.nu, obj.eta)
        } else {
            1.0
        };
        samples.push(SampleDecision { entropy: ent, degenerate, passed, lambda, target_set, pfca });
    }
    Ok(BatchPlan { batch_size: b, samples })
}

/// Parts of the recorded objective.
pub struct LossParts {
    /// Scalar loss, or `None` when no sample passed.
    pub loss: Option<Var>,
    /// Alignment loss of each passing sample, in `plan.passed()` order.
    pub l_nc: Option<Var>,
}

/// Records `(1/B) sum_i lambda_i 1[i passes] (L_ENT_i + w L_NC_i)` for a fixed plan.
///
/// Samples that did not pass are never touched, so they contribute neither
/// value nor gradient.
pub fn total_loss_with_plan(
    tape: &mut Tape,
    h: Var,
    log_p: Var,
    omega_unit: &Matrix,
    plan: &BatchPlan,
    obj: &Objective,
) -> Result<LossParts> {
    let passed = plan.passed();
    if passed.is_empty() || (!obj.use_entropy_loss && obj.nc_weight == 0.0) {
        return Ok(LossParts { loss: None, l_nc: None });
    }
    let mut inner: Option<Var> = None;
    if obj.use_entropy_loss {
        let lp = tape.select_rows(log_p, &passed)?;
        let p = tape.exp(lp);
        let plogp = tape.mul(p, lp)?;
        let s = tape.row_sum(plogp);
        inner = Some(tape.scale(s, -1.0));
    }
    let mut l_nc = None;
    if obj.nc_weight != 0.0 {
        let hs = tape.select_rows(h, &passed)?;
        let targets: Vec<Vec<usize>> = passed.iter().map(|&i| plan.samples[i].target_set.clone()).collect();
        let l = loss_nc_rows(tape, hs, omega_unit, &targets, obj.variant, obj.tau_margin)?;
        l_nc = Some(l);
        let term = if obj.nc_weight == 1.0 { l } else { tape.scale(l, obj.nc_weight) };
        inner = Some(match inner {
            Some(e) => tape.add(e, term)?,
            None => term,
        });
    }
    let mut per_sample = inner.expect("at least one term");
    if obj.use_weight {
        let lam =
            tape.constant(Matrix::col_vector(&passed.iter().map(|&i| plan.samples[i].lambda).collect::<Vec<_>>()));
        per_sample = tape.mul_col(per_sample, lam)?;
    }
    let sum = tape.sum(per_sample);
    let loss = tape.scale(sum, 1.0 / plan.batch_size as f64);
    Ok(LossParts { loss: Some(loss), l_nc })
}
