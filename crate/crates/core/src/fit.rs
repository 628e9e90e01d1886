//! Bounded Levenberg–Marquardt least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, FitDiagnostics, Result};

/// A residual vector `r(θ)`; the solver minimizes ½‖r‖².
pub trait Residuals {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);
}

impl<F> Residuals for (usize, usize, F)
where
    F: Fn(&[f64], &mut [f64]),
{
    fn n_params(&self) -> usize {
        self.0
    }
    fn n_residuals(&self) -> usize {
        self.1
    }
    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        (self.2)(params, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost-reduction tolerance.
    pub ftol: f64,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Infinity norm of the projected gradient.
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, ftol: 1e-15, xtol: 1e-12, gtol: 1e-14, initial_damping: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    /// ½‖r‖² at the solution.
    pub cost: f64,
    /// (JᵀJ)⁻¹ at the solution (pseudo-inverse when singular).
    pub unscaled_covariance: DMatrix<f64>,
    pub n_residuals: usize,
    pub diagnostics: FitDiagnostics,
}

impl LmSolution {
    pub fn residual_norm(&self) -> f64 {
        (2.0 * self.cost).sqrt()
    }

    /// Reduced χ², `‖r‖²/(m − p)`; zero when there are no spare degrees of freedom.
    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.n_residuals.saturating_sub(self.params.len());
        if dof == 0 {
            0.0
        } else {
            2.0 * self.cost / dof as f64
        }
    }

    /// Covariance scaled by the reduced χ² (unknown noise level).
    pub fn scaled_covariance(&self) -> DMatrix<f64> {
        &self.unscaled_covariance * self.reduced_chi2()
    }

    /// Standard errors from [`Self::scaled_covariance`], or from the raw
    /// covariance when residuals are already variance-weighted.
    pub fn standard_errors(&self, scaled: bool) -> Vec<f64> {
        let cov = if scaled { self.scaled_covariance() } else { self.unscaled_covariance.clone() };
        (0..self.params.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Box constraints; infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

fn eval(model: &dyn Residuals, x: &[f64], r: &mut [f64]) -> Result<f64> {
    model.residuals(x, r);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite residual at parameters {x:?}")));
    }
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

fn jacobian(model: &dyn Residuals, x: &[f64], bounds: &Bounds, jac: &mut DMatrix<f64>) {
    let m = model.n_residuals();
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for j in 0..x.len() {
        let h = 1e-7 * x[j].abs().max(1e-7);
        let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
        let up = (x[j] + h).min(hi);
        let dn = (x[j] - h).max(lo);
        xp[j] = up;
        model.residuals(&xp, &mut rp);
        xp[j] = dn;
        model.residuals(&xp, &mut rm);
        xp[j] = x[j];
        let span = up - dn;
        for i in 0..m {
            jac[(i, j)] = if span > 0.0 { (rp[i] - rm[i]) / span } else { 0.0 };
        }
    }
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if let Some(inv) = a.clone().try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return inv;
        }
    }
    let svd = a.clone().svd(true, true);
    let eps = 1e-14 * svd.singular_values.max();
    svd.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(n, n))
}

/// Projected gradient: components pushing against an active bound are dropped.
fn projected_gradient_norm(g: &DVector<f64>, x: &[f64], bounds: &Bounds) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let at_lo = x[i] <= bounds.lower[i] && g[i] > 0.0;
        let at_hi = x[i] >= bounds.upper[i] && g[i] < 0.0;
        if !(at_lo || at_hi) {
            worst = worst.max(g[i].abs());
        }
    }
    worst
}

/// Minimizes ½‖r(θ)‖² from `initial`, keeping θ inside `bounds`.
pub fn levenberg_marquardt(
    model: &dyn Residuals,
    initial: &[f64],
    bounds: &Bounds,
    options: &LmOptions,
) -> Result<LmSolution> {
    let n = model.n_params();
    let m = model.n_residuals();
    if initial.len() != n || bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::invalid("initial", "parameter vector length mismatch"));
    }
    if m < n {
        return Err(Error::Unidentifiable(format!("{m} residuals cannot determine {n} parameters")));
    }
    let mut x = initial.to_vec();
    bounds.project(&mut x);
    let mut r = vec![0.0; m];
    let mut cost = eval(model, &x, &mut r)?;
    let mut jac = DMatrix::zeros(m, n);
    let mut mu = options.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    'outer: while iterations < options.max_iterations {
        iterations += 1;
        jacobian(model, &x, bounds, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &rv;
        gnorm = projected_gradient_norm(&g, &x, bounds);
        if cost == 0.0 || gnorm <= options.gtol * (1.0 + cost) {
            converged = true;
            break;
        }
        let diag_floor = jtj.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0))
            .collect();
        let mut rhs = -&g;
        for i in (0..n).filter(|&i| active[i]) {
            rhs[i] = 0.0;
        }
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu * jtj[(i, i)].max(diag_floor);
            }
            for i in (0..n).filter(|&i| active[i]) {
                a.row_mut(i).fill(0.0);
                a.column_mut(i).fill(0.0);
                a[(i, i)] = 1.0;
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => pseudo_inverse(&a) * &rhs,
            };
            for i in 0..n {
                trial[i] = x[i] + step[i];
            }
            bounds.project(&mut trial);
            let new_cost = eval(model, &trial, &mut r_trial).unwrap_or(f64::INFINITY);
            if new_cost < cost {
                let dx: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let reduction = (cost - new_cost) / cost;
                x.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                cost = new_cost;
                mu = (mu / 3.0).max(1e-15);
                if reduction <= options.ftol || dx <= options.xtol * (xn + options.xtol) {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e20 {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    let diagnostics = FitDiagnostics { iterations, cost, damping: mu, gradient_norm: gnorm };
    if !converged {
        return Err(Error::FitNonConvergence {
            reason: format!("no convergence within {} iterations", options.max_iterations),
            diagnostics,
        });
    }
    jacobian(model, &x, bounds, &mut jac);
    let unscaled_covariance = pseudo_inverse(&(jac.transpose() * &jac));
    Ok(LmSolution { params: x, cost, unscaled_covariance, n_residuals: m, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-t / 1.7).exp() + 0.3).collect();
        let model = (3, ts.len(), |p: &[f64], out: &mut [f64]| {
            for (i, t) in ts.iter().enumerate() {
                out[i] = p[0] * (-t / p[1]).exp() + p[2] - ys[i];
            }
        });
        let sol = levenberg_marquardt(&model, &[1.0, 1.0, 0.0], &Bounds::unbounded(3), &LmOptions::default()).unwrap();
        assert!((sol.params[0] - 2.5).abs() < 1e-8);
        assert!((sol.params[1] - 1.7).abs() < 1e-8);
        assert!((sol.params[2] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn respects_bounds() {
        // minimum of (p-3)² constrained to p ≤ 2
        let model = (1, 1, |p: &[f64], out: &mut [f64]| out[0] = p[0] - 3.0);
        let b = Bounds { lower: vec![0.0], upper: vec![2.0] };
        let sol = levenberg_marquardt(&model, &[0.5], &b, &LmOptions::default()).unwrap();
        assert_eq!(sol.params[0], 2.0);
    }

    #[test]
    fn linear_covariance_matches_closed_form() {
        // y = a + b x, unit weights: cov = (XᵀX)⁻¹
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.1, 0.9, 2.1, 2.9];
        let model = (2, 4, |p: &[f64], out: &mut [f64]| {
            for i in 0..4 {
                out[i] = p[0] + p[1] * xs[i] - ys[i];
            }
        });
        let sol = levenberg_marquardt(&model, &[0.0, 0.0], &Bounds::unbounded(2), &LmOptions::default()).unwrap();
        // XᵀX = [[4,6],[6,14]], det 20
        assert!((sol.unscaled_covariance[(0, 0)] - 14.0 / 20.0).abs() < 1e-5);
        assert!((sol.unscaled_covariance[(1, 1)] - 4.0 / 20.0).abs() < 1e-5);
        assert!((sol.params[1] - 0.96).abs() < 1e-8);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let model = (3, 2, |_: &[f64], out: &mut [f64]| out.fill(0.0));
        assert!(matches!(
            levenberg_marquardt(&model, &[0.0; 3], &Bounds::unbounded(3), &LmOptions::default()),
            Err(Error::Unidentifiable(_))
        ));
    }

    #[test]
    fn reports_non_convergence() {
        let model = (1, 1, |p: &[f64], out: &mut [f64]| out[0] = p[0].sin() + 2.0);
        let opts = LmOptions { max_iterations: 1, ..LmOptions::default() };
        let res = levenberg_marquardt(&model, &[0.3], &Bounds::unbounded(1), &opts);
        assert!(matches!(res, Err(Error::FitNonConvergence { .. })));
    }
}
