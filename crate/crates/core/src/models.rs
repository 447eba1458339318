//! Model families: the parametric Gauss-Hermite series and the
//! non-parametric per-point model with a second-difference roughness penalty.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelKind {
    /// Parameters `(γ, μ, σ, h_3, …, h_order)`.
    GaussHermite { order: usize },
    /// One free value per data point.
    NonParametric,
}

/// A candidate model: family plus penalty strength `α_S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub alpha: f64,
}

impl ModelSpec {
    /// Unpenalized Gauss-Hermite series of the given order (`>= 2`).
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::invalid(format!("Gauss-Hermite order must be >= 2, got {order}")));
        }
        Ok(ModelSpec {
            kind: ModelKind::GaussHermite { order },
            alpha: 0.0,
        })
    }

    pub fn nonparametric(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("penalty strength must be >= 0, got {alpha}")));
        }
        Ok(ModelSpec {
            kind: ModelKind::NonParametric,
            alpha,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::GaussHermite { order } => {
                if order < 2 {
                    return Err(Error::invalid("Gauss-Hermite order must be >= 2"));
                }
                if self.alpha != 0.0 {
                    return Err(Error::invalid("the parametric family carries no penalty"));
                }
            }
            ModelKind::NonParametric => {
                if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
                    return Err(Error::invalid("penalty strength must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Number of free parameters for `n_data` points.
    pub fn n_params(&self, n_data: usize) -> usize {
        match self.kind {
            ModelKind::GaussHermite { order } => order + 1,
            ModelKind::NonParametric => n_data,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ModelKind::NonParametric)
    }

    fn check_dims(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        let want = self.n_params(x.len());
        if theta.len() != want {
            return Err(Error::Dimension {
                what: "theta",
                expected: want,
                got: theta.len(),
            });
        }
        if let ModelKind::GaussHermite { .. } = self.kind {
            if !(theta[2] > 0.0) {
                return Err(Error::invalid("sigma must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-point pieces of the Gauss-Hermite series and its derivatives.
struct GhPoint {
    /// Gaussian envelope `exp(-u²/2) / sqrt(2πσ)`.
    envelope: f64,
    /// `1 + Σ h_i H_i(u)`.
    series: f64,
    /// `d series / du`.
    series_du: f64,
    u: f64,
}

fn gh_point(theta: &[f64], x: f64, basis: &mut [f64]) -> GhPoint {
    let (mu, sigma) = (theta[1], theta[2]);
    let u = (x - mu) / sigma;
    hermite::fill(u, basis);
    let mut series = 1.0;
    let mut series_du = 0.0;
    for (k, &h) in theta[3..].iter().enumerate() {
        let order = k + 3;
        series += h * basis[order];
        series_du += h * (2.0 * order as f64).sqrt() * basis[order - 1];
    }
    GhPoint {
        envelope: (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI * sigma).sqrt(),
        series,
        series_du,
        u,
    }
}

/// Model values `f_i(θ)` at the abscissae.
pub fn model_values(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    spec.check_dims(theta, x)?;
    Ok(match spec.kind {
        ModelKind::NonParametric => theta.to_vec(),
        ModelKind::GaussHermite { order } => {
            let mut basis = vec![0.0; order + 1];
            x.iter()
                .map(|&xi| {
                    let p = gh_point(theta, xi, &mut basis);
                    theta[0] * p.envelope * p.series
                })
                .collect()
        }
    })
}

/// Jacobian `∂f_i/∂θ_k`, shape `N_data × dim(θ)`.
pub fn model_jacobian(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    spec.check_dims(theta, x)?;
    Ok(match spec.kind {
        ModelKind::NonParametric => DMatrix::identity(x.len(), x.len()),
        ModelKind::GaussHermite { order } => {
            let (gamma, sigma) = (theta[0], theta[2]);
            let mut basis = vec![0.0; order + 1];
            let mut jac = DMatrix::zeros(x.len(), theta.len());
            for (i, &xi) in x.iter().enumerate() {
                let p = gh_point(theta, xi, &mut basis);
                let f = gamma * p.envelope * p.series;
                let df_du = gamma * p.envelope * (p.series_du - p.u * p.series);
                jac[(i, 0)] = p.envelope * p.series;
                jac[(i, 1)] = -df_du / sigma;
                jac[(i, 2)] = -0.5 * f / sigma - df_du * p.u / sigma;
                for k in 3..=order {
                    jac[(i, k)] = gamma * p.envelope * basis[k];
                }
            }
            jac
        }
    })
}

fn check_penalty_len(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    Ok(())
}

/// Roughness `Σ (f_{i+1} - 2 f_i + f_{i-1})²` over interior points.
pub fn penalty(values: &[f64]) -> Result<f64> {
    check_penalty_len(values.len())?;
    Ok(values
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2))
        .sum())
}

/// `∇P = 2 LᵀL f`.
pub fn penalty_gradient(values: &[f64]) -> Result<Vec<f64>> {
    check_penalty_len(values.len())?;
    let mut grad = vec![0.0; values.len()];
    for (j, w) in values.windows(3).enumerate() {
        let d = 2.0 * (w[2] - 2.0 * w[1] + w[0]);
        grad[j] += d;
        grad[j + 1] -= 2.0 * d;
        grad[j + 2] += d;
    }
    Ok(grad)
}

/// The `(n-2) × n` second-difference operator with rows `(1, -2, 1)`.
pub fn second_difference(n: usize) -> Result<DMatrix<f64>> {
    check_penalty_len(n)?;
    let mut l = DMatrix::zeros(n - 2, n);
    for r in 0..n - 2 {
        l[(r, r)] = 1.0;
        l[(r, r + 1)] = -2.0;
        l[(r, r + 2)] = 1.0;
    }
    Ok(l)
}

/// `LᵀL`, the (constant) Hessian of `P / 2`.
pub fn penalty_hessian(n: usize) -> Result<DMatrix<f64>> {
    let l = second_difference(n)?;
    Ok(l.transpose() * l)
}
