//! Minimization of `χ² + α_S P`.
//!
//! The parametric family goes through a Levenberg-Marquardt loop. The
//! non-parametric family is linear, so its minimizer is computed directly:
//! with `D = diag(1/ε²)` the normal equations `(D + α LᵀL) f = D y` are
//! rewritten in Reinsch form
//!
//! ```text
//! (I/α + L D⁻¹ Lᵀ) g = L y,    f = y - D⁻¹ Lᵀ g
//! ```
//!
//! which is a pentadiagonal SPD system of size `N - 2` that stays well
//! conditioned as `α → ∞`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::banded::{BandedCholesky, SymBanded};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::models::{self, ModelKind, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub fitted: Vec<f64>,
    pub chi2: f64,
    pub penalty_value: f64,
    pub objective: f64,
    pub converged: bool,
    pub n_iterations: usize,
    /// `‖∇(χ² + α P)‖_∞` at exit, in the optimizer's parametrization.
    pub gradient_norm: f64,
}

/// Starting point for the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Moment matching for the Gauss-Hermite family; ignored for the linear family.
    Auto,
    Theta(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Initial damping relative to the largest diagonal of `JᵀJ`.
    pub damping_scale: f64,
    pub damping_factor: f64,
    /// Converged when `‖∇‖_∞ <= gradient_tol · (1 + |objective|)`.
    pub gradient_tol: f64,
    pub relative_change_tol: f64,
    pub max_iterations: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            damping_scale: 1e-3,
            damping_factor: 10.0,
            gradient_tol: 1e-6,
            relative_change_tol: 1e-12,
            max_iterations: 500,
        }
    }
}

impl LmOptions {
    pub fn tolerance(&self, objective: f64) -> f64 {
        self.gradient_tol * (1.0 + objective.abs())
    }
}

/// Fits `spec` to `data`.
///
/// The non-parametric family returns the exact minimizer from the banded
/// linear path; the Gauss-Hermite family runs Levenberg-Marquardt from `init`.
/// Non-converged results are returned with `converged = false`.
pub fn fit(spec: &ModelSpec, data: &DataSet, init: &Init) -> Result<FitResult> {
    spec.validate()?;
    if let Init::Theta(theta) = init {
        let want = spec.n_params(data.len());
        if theta.len() != want {
            return Err(Error::Dimension {
                what: "initial theta",
                expected: want,
                got: theta.len(),
            });
        }
    }
    match spec.kind {
        ModelKind::NonParametric => fit_smoothing(data, spec.alpha),
        ModelKind::GaussHermite { .. } => {
            let theta0 = match init {
                Init::Auto => auto_init(spec, data),
                Init::Theta(t) => t.clone(),
            };
            fit_lm(spec, data, &theta0, &LmOptions::default())
        }
    }
}

/// Moment-matched Gauss-Hermite start: `μ` and `σ` are the signal-weighted
/// mean and standard deviation of `x`, `γ` reproduces the area `Σ y Δx`
/// (the profile integrates to `γ √σ`), higher coefficients are zero.
pub fn auto_init(spec: &ModelSpec, data: &DataSet) -> Vec<f64> {
    let n = spec.n_params(data.len());
    if spec.is_linear() {
        return data.y().to_vec();
    }
    let x = data.x();
    let y = data.y();
    let dx = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    let w: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
    let wsum: f64 = w.iter().sum();
    let (mu, sigma) = if wsum > 0.0 {
        let mu = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / wsum;
        let var = w.iter().zip(x).map(|(w, x)| w * (x - mu).powi(2)).sum::<f64>() / wsum;
        (mu, var.sqrt().max(dx))
    } else {
        (0.5 * (x[0] + x[x.len() - 1]), 0.25 * (x[x.len() - 1] - x[0]))
    };
    let area: f64 = y.iter().sum::<f64>() * dx;
    let mut theta = vec![0.0; n];
    theta[0] = area / sigma.sqrt();
    theta[1] = mu;
    theta[2] = sigma;
    theta
}

/// Residual vector `[(y - f)/ε ; √α L f]` and its Jacobian in the internal
/// parametrization (log σ for the Gauss-Hermite family).
struct Problem<'a> {
    spec: &'a ModelSpec,
    data: &'a DataSet,
    sqrt_alpha: f64,
    log_sigma: bool,
}

impl Problem<'_> {
    fn external(&self, p: &[f64]) -> Vec<f64> {
        let mut theta = p.to_vec();
        if self.log_sigma {
            theta[2] = p[2].exp();
        }
        theta
    }

    fn internal(&self, theta: &[f64]) -> Vec<f64> {
        let mut p = theta.to_vec();
        if self.log_sigma {
            p[2] = theta[2].ln();
        }
        p
    }

    fn n_rows(&self) -> usize {
        let n = self.data.len();
        if self.sqrt_alpha > 0.0 {
            2 * n - 2
        } else {
            n
        }
    }

    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let theta = self.external(p);
        let f = models::model_values(self.spec, &theta, self.data.x())?;
        let n = self.data.len();
        let mut r = DVector::zeros(self.n_rows());
        for i in 0..n {
            r[i] = (self.data.y()[i] - f[i]) / self.data.eps()[i];
        }
        if self.sqrt_alpha > 0.0 {
            for (j, w) in f.windows(3).enumerate() {
                r[n + j] = self.sqrt_alpha * (w[2] - 2.0 * w[1] + w[0]);
            }
        }
        Ok(r)
    }

    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let theta = self.external(p);
        let mut jf = models::model_jacobian(self.spec, &theta, self.data.x())?;
        if self.log_sigma {
            let sigma = theta[2];
            jf.column_mut(2).scale_mut(sigma);
        }
        let n = self.data.len();
        let m = p.len();
        let mut jac = DMatrix::zeros(self.n_rows(), m);
        for i in 0..n {
            let s = -1.0 / self.data.eps()[i];
            for k in 0..m {
                jac[(i, k)] = s * jf[(i, k)];
            }
        }
        if self.sqrt_alpha > 0.0 {
            for j in 0..n - 2 {
                for k in 0..m {
                    jac[(n + j, k)] = self.sqrt_alpha
                        * (jf[(j + 2, k)] - 2.0 * jf[(j + 1, k)] + jf[(j, k)]);
                }
            }
        }
        Ok(jac)
    }
}

/// Relative objective slack within which a step counts as rounding noise.
const ROUNDING_SLACK: f64 = 1e-13;
/// Consecutive accepted steps that change neither the objective (relative
/// change below tolerance) nor the gradient before giving up.
const STALL_LIMIT: usize = 3;

/// Levenberg-Marquardt on `χ² + α P` for any model family.
///
/// Damping `λ I` starts at `damping_scale · max diag(JᵀJ)`, is multiplied by
/// `damping_factor` after a rejected step and divided by it after an accepted
/// one. Accepted steps never increase the objective beyond rounding.
pub fn fit_lm(
    spec: &ModelSpec,
    data: &DataSet,
    theta0: &[f64],
    opts: &LmOptions,
) -> Result<FitResult> {
    spec.validate()?;
    let problem = Problem {
        spec,
        data,
        sqrt_alpha: spec.alpha.sqrt(),
        log_sigma: matches!(spec.kind, ModelKind::GaussHermite { .. }),
    };
    let mut p = problem.internal(theta0);
    let mut r = problem.residuals(&p)?;
    let mut obj = r.norm_squared();
    if !obj.is_finite() {
        return Err(Error::NonFinite { iterations: 0 });
    }
    let mut jac = problem.jacobian(&p)?;
    let mut jtj = jac.tr_mul(&jac);
    let mut jtr = jac.tr_mul(&r);
    let mut grad_norm = 2.0 * jtr.amax();
    let mut lambda = opts.damping_scale * jtj.diagonal().max();
    if !(lambda > 0.0) {
        lambda = opts.damping_scale;
    }
    let lambda_cap = 1e32 * jtj.diagonal().max().max(1.0);
    let m = p.len();
    let mut iterations = 0;
    let mut converged = grad_norm <= opts.tolerance(obj);
    let mut stalled = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut lhs = jtj.clone();
        for k in 0..m {
            lhs[(k, k)] += lambda;
        }
        let step = match lhs.cholesky() {
            Some(ch) => ch.solve(&(-&jtr)),
            None => {
                lambda *= opts.damping_factor;
                if lambda > lambda_cap {
                    break;
                }
                continue;
            }
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let trial_r = problem.residuals(&trial);
        let trial_obj = trial_r.as_ref().map(|r| r.norm_squared()).unwrap_or(f64::NAN);
        // Near the minimum the objective stops resolving progress before the
        // gradient does; steps within rounding of `obj` are still taken when
        // they shrink the gradient.
        let mut accepted = None;
        if trial_obj.is_finite() && trial_obj <= obj {
            let tj = problem.jacobian(&trial)?;
            accepted = Some(tj);
        } else if trial_obj.is_finite() && trial_obj <= obj + ROUNDING_SLACK * obj.abs() {
            let tj = problem.jacobian(&trial)?;
            let tg = 2.0 * tj.tr_mul(trial_r.as_ref().expect("finite residuals")).amax();
            if tg < grad_norm {
                accepted = Some(tj);
            }
        }
        match accepted {
            Some(tj) => {
                let change = (obj - trial_obj) / obj.max(f64::MIN_POSITIVE);
                p = trial;
                r = trial_r?;
                obj = trial_obj;
                jac = tj;
                jtj = jac.tr_mul(&jac);
                jtr = jac.tr_mul(&r);
                let previous_grad = grad_norm;
                grad_norm = 2.0 * jtr.amax();
                lambda = (lambda / opts.damping_factor).max(f64::MIN_POSITIVE);
                converged = grad_norm <= opts.tolerance(obj);
                // a step only stalls if neither objective nor gradient moves
                let stuck = change < opts.relative_change_tol && grad_norm > 0.9 * previous_grad;
                stalled = if stuck { stalled + 1 } else { 0 };
                if !converged && stalled >= STALL_LIMIT {
                    break;
                }
            }
            None => {
                lambda *= opts.damping_factor;
                if lambda > lambda_cap {
                    break;
                }
            }
        }
    }

    let theta_hat = problem.external(&p);
    let fitted = models::model_values(spec, &theta_hat, data.x())?;
    let chi2 = data.chi2(&fitted);
    let penalty_value = if spec.alpha > 0.0 {
        models::penalty(&fitted)?
    } else {
        0.0
    };
    Ok(FitResult {
        theta_hat,
        fitted,
        chi2,
        penalty_value,
        objective: obj,
        converged,
        n_iterations: iterations,
        gradient_norm: grad_norm,
    })
}

/// Factorization of the Reinsch system for one `(ε, α)` pair.
#[derive(Debug, Clone)]
pub struct SmoothingSystem {
    alpha: f64,
    var: Vec<f64>,
    chol: Option<BandedCholesky>,
}

impl SmoothingSystem {
    /// Factors `I/α + L D⁻¹ Lᵀ` for noise levels `eps`. `α = 0` needs no
    /// factorization (the fit interpolates).
    pub fn new(eps: &[f64], alpha: f64) -> Result<Self> {
        let n = eps.len();
        if n < 3 {
            return Err(Error::TooFewPoints(n));
        }
        if !(alpha >= 0.0) || alpha.is_nan() {
            return Err(Error::invalid(format!("penalty strength must be >= 0, got {alpha}")));
        }
        let var: Vec<f64> = eps.iter().map(|e| e * e).collect();
        if alpha == 0.0 {
            return Ok(SmoothingSystem {
                alpha,
                var,
                chol: None,
            });
        }
        // (L D⁻¹ Lᵀ)_{jk} = Σ_i L_ji L_ki var_i with L_j = (1, -2, 1) at columns j..j+2
        let m = n - 2;
        let coef = [1.0, -2.0, 1.0];
        let mut b = SymBanded::zeros(m, 2);
        for j in 0..m {
            for k in j.saturating_sub(2)..=j {
                let mut s = 0.0;
                for (a, &ca) in coef.iter().enumerate() {
                    let i = j + a;
                    if i >= k && i - k < 3 {
                        s += ca * coef[i - k] * var[i];
                    }
                }
                b.add(j, k, s);
            }
            if alpha.is_finite() {
                b.add(j, j, 1.0 / alpha);
            }
        }
        Ok(SmoothingSystem {
            alpha,
            var,
            chol: Some(b.cholesky()?),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Penalized fit `f` to ordinates `y`.
    pub fn smooth(&self, y: &[f64]) -> Vec<f64> {
        let Some(chol) = &self.chol else {
            return y.to_vec();
        };
        let mut g: Vec<f64> = y.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
        chol.solve_in_place(&mut g);
        let mut f = y.to_vec();
        for (j, gj) in g.iter().enumerate() {
            f[j] -= self.var[j] * gj;
            f[j + 1] += 2.0 * self.var[j + 1] * gj;
            f[j + 2] -= self.var[j + 2] * gj;
        }
        f
    }

    /// `trace(H) = 2 + trace((I/α + L D⁻¹ Lᵀ)⁻¹) / α`.
    pub fn hat_trace(&self) -> f64 {
        match &self.chol {
            None => self.var.len() as f64,
            Some(chol) => 2.0 + chol.inverse_diagonal().iter().sum::<f64>() / self.alpha,
        }
    }

    /// Dense hat matrix `H = I - D⁻¹ Lᵀ (I/α + L D⁻¹ Lᵀ)⁻¹ L`, column by column.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        let n = self.var.len();
        let mut h = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.smooth(&e);
            h.column_mut(c).copy_from_slice(&col);
        }
        h
    }
}

fn fit_smoothing(data: &DataSet, alpha: f64) -> Result<FitResult> {
    if alpha > 0.0 && !data.is_uniform_grid() {
        return Err(Error::invalid(
            "the non-parametric family requires an evenly spaced grid",
        ));
    }
    let system = SmoothingSystem::new(data.eps(), alpha)?;
    Ok(finish_smoothing(data, alpha, system.smooth(data.y())))
}

/// Builds a [`FitResult`] for non-parametric values `f`.
pub(crate) fn finish_smoothing(data: &DataSet, alpha: f64, fitted: Vec<f64>) -> FitResult {
    let chi2 = data.chi2(&fitted);
    let penalty_value = models::penalty(&fitted).unwrap_or(0.0);
    let objective = chi2 + alpha * penalty_value;
    let pen_grad = models::penalty_gradient(&fitted).unwrap_or_default();
    let gradient_norm = (0..data.len())
        .map(|i| {
            let d = -2.0 * (data.y()[i] - fitted[i]) / data.eps()[i].powi(2);
            (d + alpha * pen_grad.get(i).copied().unwrap_or(0.0)).abs()
        })
        .fold(0.0, f64::max);
    FitResult {
        theta_hat: fitted.clone(),
        fitted,
        chi2,
        penalty_value,
        objective,
        converged: true,
        n_iterations: 1,
        gradient_norm,
    }
}

/// Design of a linear model `f = A θ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// `A = I`: the non-parametric family, solved with the banded path.
    Identity,
    /// General `N × m` design, solved densely.
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub theta_hat: Vec<f64>,
    pub fitted: Vec<f64>,
    /// `H` with `fitted = H y`.
    pub hat: DMatrix<f64>,
}

/// Solves `(AᵀΣ⁻¹A + α LᵀL) θ = AᵀΣ⁻¹ y` where `L` is the second-difference
/// operator on `θ`, and returns the hat matrix alongside the solution.
pub fn solve_linear_penalized(
    design: &Design,
    data: &DataSet,
    alpha: f64,
) -> Result<LinearSolution> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("penalty strength must be >= 0, got {alpha}")));
    }
    match design {
        Design::Identity => {
            let system = SmoothingSystem::new(data.eps(), alpha)?;
            let fitted = system.smooth(data.y());
            Ok(LinearSolution {
                theta_hat: fitted.clone(),
                fitted,
                hat: system.hat_matrix(),
            })
        }
        Design::Dense(a) => {
            let (n, m) = a.shape();
            if n != data.len() {
                return Err(Error::Dimension {
                    what: "design rows",
                    expected: data.len(),
                    got: n,
                });
            }
            let normal = penalized_normal_matrix(a, data.eps(), alpha)?;
            let chol = checked_cholesky(normal).ok_or_else(|| {
                Error::Singular(format!("normal matrix of {n}×{m} design is rank deficient"))
            })?;
            let weighted_t = weighted_transpose(a, data.eps());
            let y = DVector::from_column_slice(data.y());
            let theta = chol.solve(&(&weighted_t * &y));
            let fitted = a * &theta;
            let hat = a * chol.solve(&weighted_t);
            Ok(LinearSolution {
                theta_hat: theta.iter().copied().collect(),
                fitted: fitted.iter().copied().collect(),
                hat,
            })
        }
    }
}

/// Cholesky factor, rejecting pivots that vanish relative to the largest
/// diagonal entry (numerically rank-deficient systems).
pub(crate) fn checked_cholesky(
    normal: DMatrix<f64>,
) -> Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    let scale = normal.diagonal().amax();
    let chol = normal.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|k| l[(k, k)].powi(2)).fold(f64::INFINITY, f64::min);
    (min_pivot > 1e-13 * scale).then_some(chol)
}

/// `AᵀΣ⁻¹`.
pub(crate) fn weighted_transpose(a: &DMatrix<f64>, eps: &[f64]) -> DMatrix<f64> {
    let mut at = a.transpose();
    for (c, e) in eps.iter().enumerate() {
        at.column_mut(c).scale_mut(1.0 / (e * e));
    }
    at
}

/// `AᵀΣ⁻¹A + α LᵀL`.
pub(crate) fn penalized_normal_matrix(
    a: &DMatrix<f64>,
    eps: &[f64],
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let m = a.ncols();
    let mut normal = weighted_transpose(a, eps) * a;
    if alpha > 0.0 {
        if m < 3 {
            return Err(Error::invalid("a penalized design needs at least 3 columns"));
        }
        normal += models::penalty_hessian(m)? * alpha;
    }
    Ok(normal)
}
