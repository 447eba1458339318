//! Generalized Akaike model selection for penalized maximum-likelihood fits.
//!
//! The effective number of free parameters `m_eff` of a fit is estimated by
//! refitting parametric bootstrap resamples of the best fit, and candidate
//! models are ranked by `AIC_p = χ² + 2 m_eff`. Two model families are
//! provided: a Gauss-Hermite series (order selection) and a non-parametric
//! per-point model with a second-difference roughness penalty (penalty
//! strength selection).

pub mod banded;
pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod hermite;
pub mod models;
pub mod oracle;
pub mod selection;
pub mod solver;

pub use error::{Error, Result};
