//! Non-interactive comparators: Benjamini–Hochberg, the Barber–Candès style
//! threshold on signed statistics, and BH on linear-model p-values.

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::models::{fit_least_squares, Features, LinearFit};
use crate::normal;

/// Indices rejected by the BH step-up rule. Tied p-values are rejected together.
pub fn bh_step_up(p: &[f64], alpha: f64) -> Vec<usize> {
    let n = p.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=n).rev().find(|&i| sorted[i - 1] <= i as f64 * alpha / n as f64).map(|i| sorted[i - 1]);
    match cutoff {
        Some(c) => (0..n).filter(|&i| p[i] <= c).collect(),
        None => Vec::new(),
    }
}

/// Smallest `ν ∈ {|v_i|}` with `(#{v ≤ −ν} + 1) / max(#{v ≥ ν, v > 0}, 1) ≤ α`,
/// and the indices with `v ≥ ν, v > 0`. No qualifying `ν` rejects nothing.
pub fn bc_threshold(v: &[f64], alpha: f64) -> (Option<f64>, Vec<usize>) {
    let mut cands: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    // Counts for each candidate threshold via two sorted lists.
    let mut neg: Vec<f64> = v.iter().filter(|&&x| x <= 0.0).map(|x| -x).collect();
    let mut pos: Vec<f64> = v.iter().filter(|&&x| x > 0.0).copied().collect();
    neg.sort_by(f64::total_cmp);
    pos.sort_by(f64::total_cmp);
    for nu in cands {
        let n_neg = neg.len() - neg.partition_point(|&x| x < nu);
        let n_pos = pos.len() - pos.partition_point(|&x| x < nu);
        if (n_neg as f64 + 1.0) / n_pos.max(1) as f64 <= alpha {
            let rej = (0..v.len()).filter(|&i| v[i] > 0.0 && v[i] >= nu).collect();
            return (Some(nu), rej);
        }
    }
    (None, Vec::new())
}

#[derive(Debug, Clone)]
pub struct LinearBhResult {
    pub rejected: Vec<usize>,
    pub p_values: Vec<f64>,
    pub effect_estimates: Vec<f64>,
    /// Set when an arm's design was rank-deficient.
    pub ridge_fallback: bool,
}

/// BH on one-sided p-values from per-arm least squares. For each subject the
/// unobserved arm's outcome is imputed by that arm's fitted model, and the
/// variance of the imputed outcome is the fitted-mean variance at the
/// subject's covariates.
pub fn linear_bh(dataset: &Dataset, alpha: f64) -> Result<LinearBhResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    let d = dataset.d();
    let arm_fit = |arm: u8| -> Result<LinearFit> {
        let mut x = Features::new(d);
        let mut y = Vec::new();
        for i in (0..dataset.n()).filter(|&i| dataset.a(i) == arm) {
            if d > 0 {
                x.push(dataset.x(i));
            }
            y.push(dataset.y(i));
        }
        if y.len() <= d + 1 {
            return Err(invalid(format!("arm {arm} has {} subjects; needs more than {}", y.len(), d + 1)));
        }
        fit_least_squares(&x, &y)
    };
    let treated = arm_fit(1)?;
    let control = arm_fit(0)?;
    let mut p_values = Vec::with_capacity(dataset.n());
    let mut effect_estimates = Vec::with_capacity(dataset.n());
    for i in 0..dataset.n() {
        let x = dataset.x(i);
        let (yt, vt, yc, vc) = if dataset.a(i) == 1 {
            (dataset.y(i), treated.sigma2, control.predict(x), control.mean_variance(x))
        } else {
            (treated.predict(x), treated.mean_variance(x), dataset.y(i), control.sigma2)
        };
        let est = yt - yc;
        let sd = (vt + vc).sqrt();
        effect_estimates.push(est);
        p_values.push(normal::sf(est / sd));
    }
    Ok(LinearBhResult {
        rejected: bh_step_up(&p_values, alpha),
        p_values,
        effect_estimates,
        ridge_fallback: treated.ridge_fallback || control.ridge_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_example() {
        assert_eq!(bh_step_up(&[0.01, 0.02, 0.5, 0.9], 0.2), vec![0, 1]);
        assert_eq!(bh_step_up(&[0.9, 0.01, 0.5, 0.02], 0.2), vec![1, 3]);
        assert!(bh_step_up(&[0.5, 0.6], 0.1).is_empty());
    }

    #[test]
    fn bh_keeps_ties_together() {
        assert_eq!(bh_step_up(&[0.04, 0.04, 0.04, 0.9], 0.2), vec![0, 1, 2]);
    }

    #[test]
    fn bc_example() {
        let (tau, rej) = bc_threshold(&[3.0, 2.0, -1.0], 0.5);
        assert_eq!(tau, Some(2.0));
        assert_eq!(rej, vec![0, 1]);
    }

    #[test]
    fn bc_without_qualifying_threshold() {
        let (tau, rej) = bc_threshold(&[1.0, -2.0, -3.0], 0.5);
        assert_eq!(tau, None);
        assert!(rej.is_empty());
    }
}
