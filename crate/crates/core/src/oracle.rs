//! Closed-form cross-checks for linear models.
//!
//! For `f = A θ` fitted by penalized least squares the refit response is
//! `f(θ̂_z) − f(θ̂_y) = H (z − f(θ̂_y))` with
//! `H = A (AᵀΣ⁻¹A + α LᵀL)⁻¹ AᵀΣ⁻¹`, so the bootstrap expectation of
//! `m_eff` is `trace(Σ⁻¹ H Σ) = trace(H)` exactly. That makes `trace(H)` an
//! oracle which owes nothing to Monte Carlo.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, sample_variance, BootstrapPlan, BootstrapSummary, Refit};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::solver::{self, checked_cholesky, penalized_normal_matrix, weighted_transpose};
use crate::solver::{Design, Init, SmoothingSystem};

/// How `trace(H)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceRoute {
    /// Identity design: `2 + trace(B⁻¹)/α` from the banded Reinsch factor.
    /// Dense designs fall back to [`TraceRoute::ColumnSolve`].
    Banded,
    /// Explicit inverse of the normal matrix.
    Inverse,
    /// One Cholesky solve per column of `AᵀΣ⁻¹A`.
    ColumnSolve,
}

fn dense_design(design: &Design, n: usize) -> DMatrix<f64> {
    match design {
        Design::Identity => DMatrix::identity(n, n),
        Design::Dense(a) => a.clone(),
    }
}

/// `trace(H)` for the given design, noise levels and penalty strength.
pub fn analytic_meff(design: &Design, eps: &[f64], alpha: f64) -> Result<f64> {
    analytic_meff_with(design, eps, alpha, TraceRoute::Banded)
}

pub fn analytic_meff_with(
    design: &Design,
    eps: &[f64],
    alpha: f64,
    route: TraceRoute,
) -> Result<f64> {
    if !(alpha >= 0.0) || alpha.is_nan() {
        return Err(Error::invalid(format!("penalty strength must be >= 0, got {alpha}")));
    }
    if let Design::Dense(a) = design {
        if a.nrows() != eps.len() {
            return Err(Error::Dimension {
                what: "design rows",
                expected: eps.len(),
                got: a.nrows(),
            });
        }
    }
    if route == TraceRoute::Banded {
        if let Design::Identity = design {
            return Ok(SmoothingSystem::new(eps, alpha)?.hat_trace());
        }
    }
    if !alpha.is_finite() {
        return Err(Error::invalid("infinite penalty needs the banded route"));
    }
    let a = dense_design(design, eps.len());
    let normal = penalized_normal_matrix(&a, eps, alpha)?;
    // trace(A N⁻¹ AᵀΣ⁻¹) = trace(N⁻¹ AᵀΣ⁻¹A)
    let gram = weighted_transpose(&a, eps) * &a;
    match route {
        TraceRoute::Inverse => {
            let inv = normal
                .try_inverse()
                .ok_or_else(|| Error::Singular("normal matrix is not invertible".into()))?;
            Ok((inv * gram).trace())
        }
        TraceRoute::Banded | TraceRoute::ColumnSolve => {
            let chol = checked_cholesky(normal)
                .ok_or_else(|| Error::Singular("normal matrix is rank deficient".into()))?;
            let mut tr = 0.0;
            for k in 0..gram.ncols() {
                let col: DVector<f64> = gram.column(k).into_owned();
                tr += chol.solve(&col)[k];
            }
            Ok(tr)
        }
    }
}

/// Checks of the unpenalized identities `E(χ²_prior) = N`,
/// `E(χ²_posterior) = N − m` and `E(χ²_prior) − E(χ²_posterior) = m_eff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub n_params: f64,
    pub prior_expected: f64,
    pub prior_z: f64,
    pub posterior_expected: f64,
    pub posterior_z: f64,
    /// Mean over κ of `χ²_prior − χ²_posterior − m_eff^κ`.
    pub difference: f64,
    pub difference_z: f64,
    /// All three within three standard errors.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub alpha: f64,
    pub meff_analytic: f64,
    pub meff_bootstrap: f64,
    pub var_meff: Option<f64>,
    /// `(bootstrap − analytic)/√var`; zero when both agree exactly with no
    /// scatter.
    pub z_score: f64,
    pub chi2_prior_mean: f64,
    pub chi2_posterior_mean: f64,
    /// Present for unpenalized fits, where the identities hold exactly.
    pub identity: Option<IdentityCheck>,
}

fn z(diff: f64, var: Option<f64>) -> f64 {
    match var {
        Some(v) if v > 0.0 => diff / v.sqrt(),
        _ if diff.abs() <= 1e-9 => 0.0,
        _ => f64::INFINITY.copysign(diff),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn identity_check(summary: &BootstrapSummary, n: usize, m: f64) -> IdentityCheck {
    let k = summary.n_used() as f64;
    let se = |v: &[f64]| sample_variance(v).map(|s| s / k);
    let prior = &summary.chi2_prior_per_iter;
    let post = &summary.chi2_boot_per_iter;
    let diff: Vec<f64> = (0..prior.len())
        .map(|i| prior[i] - post[i] - summary.m_eff_per_iter[i])
        .collect();
    let n = n as f64;
    let prior_z = z(mean(prior) - n, se(prior));
    let posterior_z = z(mean(post) - (n - m), se(post));
    let difference = mean(&diff);
    // the difference is exactly zero per iteration up to rounding
    let difference_z = if difference.abs() <= 1e-9 * n {
        0.0
    } else {
        z(difference, se(&diff))
    };
    IdentityCheck {
        n_params: m,
        prior_expected: n,
        prior_z,
        posterior_expected: n - m,
        posterior_z,
        difference,
        difference_z,
        holds: [prior_z, posterior_z, difference_z].iter().all(|v| v.abs() <= 3.0),
    }
}

fn report(
    alpha: f64,
    analytic: f64,
    summary: &BootstrapSummary,
    n_data: usize,
) -> OracleReport {
    OracleReport {
        alpha,
        meff_analytic: analytic,
        meff_bootstrap: summary.m_eff,
        var_meff: summary.var_direct,
        z_score: z(summary.m_eff - analytic, summary.var_direct),
        chi2_prior_mean: summary.chi2_prior_mean(),
        chi2_posterior_mean: summary.chi2_posterior_mean(),
        identity: (alpha == 0.0).then(|| identity_check(summary, n_data, analytic)),
    }
}

/// Bootstraps the non-parametric family at each `α_S` and compares against
/// `trace(H)`. `spec` only selects the family; its own `α` is not used.
pub fn validate_bootstrap(
    spec: &ModelSpec,
    data: &DataSet,
    plan: &BootstrapPlan,
    alpha_grid: &[f64],
) -> Result<Vec<OracleReport>> {
    if !spec.is_linear() {
        return Err(Error::NonLinearOracle);
    }
    alpha_grid
        .iter()
        .map(|&alpha| {
            let spec = ModelSpec::nonparametric(alpha)?;
            let fit = solver::fit(&spec, data, &Init::Auto)?;
            let summary = bootstrap::run_bootstrap(&spec, data, &fit, plan)?;
            let analytic = analytic_meff(&Design::Identity, data.eps(), alpha)?;
            Ok(report(alpha, analytic, &summary, data.len()))
        })
        .collect()
}

/// Same check for a general `N × m` design, refitting every resample from
/// its normal equations.
pub fn validate_design(
    a: &DMatrix<f64>,
    data: &DataSet,
    plan: &BootstrapPlan,
    alpha: f64,
) -> Result<OracleReport> {
    let design = Design::Dense(a.clone());
    let analytic = analytic_meff(&design, data.eps(), alpha)?;
    let fit_y = solver::solve_linear_penalized(&design, data, alpha)?;
    let normal = penalized_normal_matrix(a, data.eps(), alpha)?;
    let chol = checked_cholesky(normal)
        .ok_or_else(|| Error::Singular("normal matrix is rank deficient".into()))?;
    let weighted_t = weighted_transpose(a, data.eps());
    let summary = bootstrap::run_bootstrap_with(data, &fit_y.fitted, plan, |z| {
        let theta = chol.solve(&(&weighted_t * DVector::from_column_slice(z.y())));
        Ok(Refit {
            fitted: (a * theta).iter().copied().collect(),
            converged: true,
        })
    })?;
    Ok(report(alpha, analytic, &summary, data.len()))
}

/// Polynomial design `u^k`, `k < m`, with `u = x / max|x|`.
pub fn polynomial_design(x: &[f64], m: usize) -> Result<DMatrix<f64>> {
    if m == 0 || m > x.len() {
        return Err(Error::invalid(format!(
            "polynomial design needs 1 <= m <= {}, got {m}",
            x.len()
        )));
    }
    let scale = x.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    Ok(DMatrix::from_fn(x.len(), m, |i, k| (x[i] / scale).powi(k as i32)))
}

/// CSV `alpha,meff_analytic,meff_bootstrap,z_score,chi2_prior,chi2_posterior`.
pub fn reports_to_csv(reports: &[OracleReport], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("alpha,meff_analytic,meff_bootstrap,z_score,chi2_prior,chi2_posterior\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            r.alpha,
            r.meff_analytic,
            r.meff_bootstrap,
            r.z_score,
            r.chi2_prior_mean,
            r.chi2_posterior_mean
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mock, MockConfig};
    use crate::selection::log_grid;

    fn data(snr: f64) -> DataSet {
        generate_mock(&MockConfig::paper_default(snr, 11)).unwrap().data
    }

    #[test]
    fn identity_design_limits() {
        let d = data(10.0);
        assert_eq!(analytic_meff(&Design::Identity, d.eps(), 0.0).unwrap(), 71.0);
        let far = analytic_meff(&Design::Identity, d.eps(), 1e20).unwrap();
        assert!((far - 2.0).abs() < 1e-6, "{far}");
    }

    #[test]
    fn unpenalized_design_counts_columns() {
        let d = data(10.0);
        for m in [1, 3, 5, 8] {
            let a = polynomial_design(d.x(), m).unwrap();
            let tr = analytic_meff(&Design::Dense(a), d.eps(), 0.0).unwrap();
            assert!((tr - m as f64).abs() < 1e-10, "m={m}: {tr}");
        }
    }

    #[test]
    fn routes_agree() {
        let d = data(100.0);
        for alpha in [1e3, 1e5, 1e7] {
            let banded = analytic_meff_with(&Design::Identity, d.eps(), alpha, TraceRoute::Banded).unwrap();
            let inv = analytic_meff_with(&Design::Identity, d.eps(), alpha, TraceRoute::Inverse).unwrap();
            let cols = analytic_meff_with(&Design::Identity, d.eps(), alpha, TraceRoute::ColumnSolve).unwrap();
            assert!((inv - cols).abs() < 1e-10, "{inv} {cols}");
            assert!((banded - cols).abs() < 1e-8 * banded, "{banded} {cols}");
        }
        let a = polynomial_design(d.x(), 9).unwrap();
        let design = Design::Dense(a);
        let inv = analytic_meff_with(&design, d.eps(), 1e4, TraceRoute::Inverse).unwrap();
        let cols = analytic_meff_with(&design, d.eps(), 1e4, TraceRoute::ColumnSolve).unwrap();
        assert!((inv - cols).abs() < 1e-10);
    }

    #[test]
    fn trace_strictly_decreases_and_stays_in_range() {
        let d = data(10.0);
        let grid = log_grid(1e-2, 1e14, 40).unwrap();
        let traces: Vec<f64> = grid
            .iter()
            .map(|&a| analytic_meff(&Design::Identity, d.eps(), a).unwrap())
            .collect();
        for w in traces.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(traces.iter().all(|&t| (0.0..=71.0).contains(&t)));
    }

    #[test]
    fn nonlinear_family_rejected() {
        let d = data(10.0);
        let plan = BootstrapPlan::new(2, 1).unwrap();
        let spec = ModelSpec::gauss_hermite(4).unwrap();
        assert!(matches!(
            validate_bootstrap(&spec, &d, &plan, &[1.0]),
            Err(Error::NonLinearOracle)
        ));
    }

    #[test]
    fn zero_penalty_identities() {
        let d = data(10.0);
        let plan = BootstrapPlan::new(200, 5).unwrap();
        let spec = ModelSpec::nonparametric(0.0).unwrap();
        let r = &validate_bootstrap(&spec, &d, &plan, &[0.0]).unwrap()[0];
        assert_eq!(r.chi2_posterior_mean, 0.0);
        assert!((r.chi2_prior_mean - r.meff_bootstrap).abs() < 1e-9);
        assert!((r.chi2_prior_mean - 71.0).abs() <= 3.0 * (142.0f64 / 200.0).sqrt());
        assert!(r.identity.as_ref().unwrap().holds);

        let a = polynomial_design(d.x(), 5).unwrap();
        let r = validate_design(&a, &d, &plan, 0.0).unwrap();
        let id = r.identity.unwrap();
        assert!(id.holds, "{id:?}");
        assert!(id.difference.abs() < 1e-9);
    }

    #[test]
    fn penalized_bootstrap_matches_trace() {
        let d = data(100.0);
        let plan = BootstrapPlan::new(100, 9).unwrap();
        let spec = ModelSpec::nonparametric(1.0).unwrap();
        let reports = validate_bootstrap(&spec, &d, &plan, &[1e4, 1e6, 1e8]).unwrap();
        for r in &reports {
            assert!(r.identity.is_none());
            assert!(r.z_score.abs() < 4.0, "{r:?}");
        }
        let csv = reports_to_csv(&reports, &[]);
        assert_eq!(csv.lines().count(), 4);
    }
}
