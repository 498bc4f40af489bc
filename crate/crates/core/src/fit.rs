//! Least-squares machinery shared by the resonance, singles, coherence and
//! fringe fits.
//!
//! Two solvers live here: an SVD-based linear least squares for models that
//! are linear in their parameters, and a Levenberg-Marquardt loop for the
//! Lorentzian and double-exponential fits.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Parameter estimates with their uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Row-major parameter covariance.
    pub covariance: Vec<f64>,
    /// Root-mean-square of the unweighted residuals.
    pub residual_rms: f64,
    /// Sum of squared weighted residuals.
    pub chi_square: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.params.len() + j]
    }
}

/// Smallest accepted ratio of singular values before a design is called
/// rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Linear least squares `y ≈ X·θ`.
///
/// `rows` holds the design matrix row by row. With `sigma` the fit is
/// weighted and the covariance is `(XᵀWX)⁻¹`; without it the covariance is
/// scaled by the residual variance.
pub fn linear_least_squares(rows: &[Vec<f64>], y: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    let m = rows.len();
    if m == 0 || m != y.len() {
        return Err(Error::degenerate("empty design or length mismatch"));
    }
    let n = rows[0].len();
    if m < n {
        return Err(Error::degenerate("fewer observations than parameters"));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect(),
        None => vec![1.0; m],
    };
    let x = DMatrix::from_fn(m, n, |i, j| rows[i][j] * w[i]);
    let yw = DVector::from_fn(m, |i, _| y[i] * w[i]);

    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= RANK_TOLERANCE * smax {
        return Err(Error::degenerate("design matrix is rank deficient"));
    }
    let theta = svd
        .solve(&yw, RANK_TOLERANCE * smax)
        .map_err(|e| Error::degenerate(alloc::format!("least squares solve failed: {e}")))?;

    // (XᵀX)⁻¹ = V Σ⁻² Vᵀ
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        let s2 = svd.singular_values[k] * svd.singular_values[k];
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += v_t[(k, i)] * v_t[(k, j)] / s2;
            }
        }
    }

    let mut ssr = 0.0;
    let mut ssr_weighted = 0.0;
    for i in 0..m {
        let pred: f64 = rows[i].iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        let r = y[i] - pred;
        ssr += r * r;
        ssr_weighted += (r * w[i]) * (r * w[i]);
    }
    if sigma.is_none() {
        let dof = (m - n).max(1) as f64;
        cov *= ssr_weighted / dof;
    }
    Ok(pack(theta.iter().copied().collect(), &cov, libm::sqrt(ssr / m as f64), ssr_weighted, 1))
}

fn pack(params: Vec<f64>, cov: &DMatrix<f64>, residual_rms: f64, chi_square: f64, iterations: usize) -> FitResult {
    let n = params.len();
    let std_errors = (0..n).map(|i| libm::sqrt(cov[(i, i)].max(0.0))).collect();
    let covariance = (0..n * n).map(|k| cov[(k / n, k % n)]).collect();
    FitResult { params, std_errors, covariance, residual_rms, chi_square, iterations }
}

/// Settings for [`levenberg_marquardt`].
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Convergence when every parameter moves by less than this relative
    /// amount in one accepted step.
    pub relative_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iterations: 200, relative_step: 1e-9 }
    }
}

/// Nonlinear least squares `y_i ≈ f(x_i; θ)` by Levenberg-Marquardt with
/// Marquardt diagonal scaling.
///
/// `model(x, θ, grad)` returns `f(x; θ)` and writes `∂f/∂θ` into `grad`.
/// On hitting the iteration cap the error carries the best iterate.
pub fn levenberg_marquardt<F>(
    model: F,
    xs: &[f64],
    ys: &[f64],
    sigma: Option<&[f64]>,
    initial: &[f64],
    opts: LmOptions,
) -> Result<FitResult>
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64,
{
    let m = xs.len();
    let n = initial.len();
    if m != ys.len() || m < n {
        return Err(Error::degenerate("not enough samples for the number of parameters"));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect(),
        None => vec![1.0; m],
    };

    let mut grad = vec![0.0; n];
    let cost = |p: &[f64], grad: &mut [f64]| -> f64 {
        xs.iter()
            .zip(ys)
            .zip(&w)
            .map(|((&x, &y), &w)| {
                let r = (y - model(x, p, grad)) * w;
                r * r
            })
            .sum()
    };

    let mut params = initial.to_vec();
    let mut current = cost(&params, &mut grad);
    if !current.is_finite() {
        return Err(Error::degenerate("model is not finite at the initial guess"));
    }
    let mut lambda = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut res = DVector::<f64>::zeros(m);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        for i in 0..m {
            let f = model(xs[i], &params, &mut grad);
            res[i] = (ys[i] - f) * w[i];
            for j in 0..n {
                jac[(i, j)] = grad[j] * w[i];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, d)| p + d).collect();
            let trial_cost = cost(&trial, &mut grad);
            if trial_cost.is_finite() && trial_cost <= current {
                let small = params
                    .iter()
                    .zip(step.iter())
                    .all(|(p, d)| d.abs() <= opts.relative_step * (p.abs() + opts.relative_step));
                let stalled = current - trial_cost <= 1e-15 * current;
                params = trial;
                current = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small || stalled {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // No downhill step at any damping: already at the minimum to
        // machine precision.
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { what: "Levenberg-Marquardt fit", iterations, best: params });
    }

    for i in 0..m {
        model(xs[i], &params, &mut grad);
        for j in 0..n {
            jac[(i, j)] = grad[j] * w[i];
        }
    }
    let jtj = jac.transpose() * &jac;
    let mut cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::degenerate("singular Jacobian at the solution"))?;
    if sigma.is_none() {
        let dof = (m - n).max(1) as f64;
        cov *= current / dof;
    }
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - model(x, &params, &mut grad);
            r * r
        })
        .sum();
    Ok(pack(params, &cov, libm::sqrt(ssr / m as f64), current, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_is_exact() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| 3.0 - 2.0 * i as f64).collect();
        let fit = linear_least_squares(&rows, &y, None).unwrap();
        assert!((fit.params[0] - 3.0).abs() < 1e-12);
        assert!((fit.params[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 2.0]).collect();
        let y = vec![1.0; 5];
        assert!(matches!(linear_least_squares(&rows, &y, None), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn lm_recovers_exponential_decay() {
        let model = |x: f64, p: &[f64], g: &mut [f64]| {
            let e = libm::exp(-x / p[1]);
            g[0] = e;
            g[1] = p[0] * e * x / (p[1] * p[1]);
            p[0] * e
        };
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 5.0 * libm::exp(-x / 1.7)).collect();
        let fit = levenberg_marquardt(model, &xs, &ys, None, &[3.0, 1.0], LmOptions::default()).unwrap();
        assert!((fit.params[0] - 5.0).abs() < 1e-8);
        assert!((fit.params[1] - 1.7).abs() < 1e-8);
    }

    #[test]
    fn lm_reports_best_iterate_on_cap() {
        let model = |x: f64, p: &[f64], g: &mut [f64]| {
            let e = libm::exp(-x / p[1]);
            g[0] = e;
            g[1] = p[0] * e * x / (p[1] * p[1]);
            p[0] * e
        };
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 5.0 * libm::exp(-x / 1.7)).collect();
        let opts = LmOptions { max_iterations: 1, relative_step: 1e-9 };
        match levenberg_marquardt(model, &xs, &ys, None, &[3.0, 1.0], opts) {
            Err(Error::NoConvergence { best, .. }) => assert_eq!(best.len(), 2),
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }
}
