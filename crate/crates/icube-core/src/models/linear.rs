use super::Features;
use crate::error::{invalid, Result};
use nalgebra::{DMatrix, DVector};

const RIDGE: f64 = 1e-8;

/// Least-squares fit with intercept. `coefficients[0]` is the intercept.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    /// Residual variance `RSS / (n - d - 1)`.
    pub sigma2: f64,
    /// `(X̃ᵀX̃)⁻¹` for the intercept-augmented design.
    pub xtx_inv: DMatrix<f64>,
    /// True when the design was rank-deficient and a ridge penalty was added.
    pub ridge_fallback: bool,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + x.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Estimated variance `σ̂²·x̃ᵀ(X̃ᵀX̃)⁻¹x̃` of the fitted mean at `x`.
    pub fn mean_variance(&self, x: &[f64]) -> f64 {
        let xt = augmented(x);
        self.sigma2 * (xt.transpose() * &self.xtx_inv * &xt)[(0, 0)]
    }
}

fn augmented(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
}

/// Ordinary least squares. Needs more rows than `d + 1`.
pub fn fit_least_squares(x: &Features, y: &[f64]) -> Result<LinearFit> {
    let n = y.len();
    let d = x.d;
    if n <= d + 1 {
        return Err(invalid(format!("least squares with {d} covariates needs more than {} rows", d + 1)));
    }
    if d > 0 && x.rows() != n {
        return Err(invalid("feature rows and labels disagree"));
    }
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x.values[i * d + j - 1] });
    let target = DVector::from_column_slice(y);
    let mut xtx = design.transpose() * &design;
    let scale = xtx.diagonal().max().max(1.0);
    let svd = xtx.clone().svd(false, false);
    let smallest = svd.singular_values.min();
    let ridge_fallback = smallest <= 1e-12 * scale;
    if ridge_fallback {
        log::warn!("rank-deficient design; adding ridge penalty {RIDGE}");
        for j in 0..=d {
            xtx[(j, j)] += RIDGE;
        }
    }
    let xtx_inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| invalid("design matrix could not be inverted"))?;
    let beta = &xtx_inv * design.transpose() * &target;
    let resid = &target - &design * &beta;
    let sigma2 = resid.norm_squared() / (n - d - 1) as f64;
    Ok(LinearFit { coefficients: beta.iter().copied().collect(), sigma2, xtx_inv, ridge_fallback })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_regression_matches_closed_form() {
        let xs = [0.0, 1.0, 2.0, 4.0, 7.0];
        let ys = [1.0, 2.9, 5.2, 8.8, 15.1];
        let mut f = Features::new(1);
        xs.iter().for_each(|v| f.push(&[*v]));
        let fit = fit_least_squares(&f, &ys).unwrap();
        let mx = xs.iter().sum::<f64>() / 5.0;
        let my = ys.iter().sum::<f64>() / 5.0;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        assert!((fit.coefficients[1] - slope).abs() < 1e-12);
        assert!((fit.coefficients[0] - icpt).abs() < 1e-12);
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
        assert!((fit.sigma2 - rss / 3.0).abs() < 1e-12);
        // Var of the fitted line: σ²(1/n + (x - x̄)²/Sxx).
        let at = 3.0;
        let expect = fit.sigma2 * (1.0 / 5.0 + (at - mx).powi(2) / sxx);
        assert!((fit.mean_variance(&[at]) - expect).abs() < 1e-12);
        assert!((fit.mean_variance(&[mx]) - fit.sigma2 / 5.0).abs() < 1e-12);
        assert!(!fit.ridge_fallback);
    }

    #[test]
    fn rank_deficient_design_falls_back_to_ridge() {
        let mut f = Features::new(2);
        let mut y = Vec::new();
        for i in 0..10 {
            let v = i as f64;
            f.push(&[v, 2.0 * v]);
            y.push(1.0 + v);
        }
        let fit = fit_least_squares(&f, &y).unwrap();
        assert!(fit.ridge_fallback);
        let p = fit.predict(&[3.0, 6.0]);
        assert!((p - 4.0).abs() < 1e-4, "{p}");
    }

    #[test]
    fn too_few_rows() {
        let mut f = Features::new(2);
        f.push(&[1.0, 2.0]);
        f.push(&[2.0, 0.0]);
        assert!(fit_least_squares(&f, &[1.0, 2.0]).is_err());
    }
}
