//! Candidate scans ranked by `AIC_p = χ² + 2 m_eff`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, BootstrapPlan, BootstrapSummary, DerivativeScatter};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::solver::{self, FitResult, Init};

/// Generalized Akaike criterion.
pub fn aicp(chi2: f64, m_eff: f64) -> f64 {
    chi2 + 2.0 * m_eff
}

/// Root-mean-square difference between a fit and the generating truth.
pub fn rms_truth(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() {
        return Err(Error::Dimension {
            what: "truth",
            expected: fitted.len(),
            got: truth.len(),
        });
    }
    if fitted.is_empty() {
        return Err(Error::invalid("empty fit"));
    }
    let ss: f64 = fitted.iter().zip(truth).map(|(f, t)| (f - t).powi(2)).sum();
    Ok((ss / fitted.len() as f64).sqrt())
}

/// `χ² + m_eff` within `N ± 3 sqrt(2N)`.
pub fn is_viable(chi2: f64, m_eff: f64, n_data: usize) -> bool {
    let n = n_data as f64;
    (chi2 + m_eff - n).abs() <= 3.0 * (2.0 * n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    /// Gauss-Hermite order.
    Order,
    /// `log10 α_S`.
    Log10Alpha,
}

/// Forward differences between an entry and its successor on the α axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSlope {
    pub dchi2_dlog10_alpha: f64,
    /// `-2 dm_eff / dlog10 α`; equals the χ² slope where `AIC_p` is stationary.
    pub neg2_dmeff_dlog10_alpha: f64,
    pub daicp_dlog10_alpha: f64,
    pub scatter: DerivativeScatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub spec: ModelSpec,
    pub axis_value: f64,
    pub chi2: f64,
    pub m_eff: f64,
    pub var_meff: Option<f64>,
    pub aic_p: f64,
    pub rms_truth: Option<f64>,
    pub viable: bool,
    /// Fit converged and the bootstrap summary is valid.
    pub valid: bool,
    pub slope: Option<AlphaSlope>,
    #[serde(skip)]
    pub fit: Option<FitResult>,
    #[serde(skip)]
    pub summary: Option<BootstrapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub axis: ScanAxis,
    pub entries: Vec<SelectionEntry>,
    pub selected: Option<usize>,
    pub n_data: usize,
    pub plan: BootstrapPlan,
}

/// Index of the smallest `AIC_p` among valid entries; ties go to the smaller
/// `m_eff`.
pub fn select_min(entries: &[SelectionEntry]) -> Option<usize> {
    entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.valid && e.aic_p.is_finite())
        .min_by(|(_, a), (_, b)| {
            a.aic_p
                .total_cmp(&b.aic_p)
                .then(a.m_eff.total_cmp(&b.m_eff))
        })
        .map(|(i, _)| i)
}

fn build_entry(
    spec: ModelSpec,
    axis_value: f64,
    data: &DataSet,
    fit: FitResult,
    plan: &BootstrapPlan,
    truth: Option<&[f64]>,
) -> Result<SelectionEntry> {
    let summary = bootstrap::run_bootstrap(&spec, data, &fit, plan)?;
    let rms = truth.map(|t| rms_truth(&fit.fitted, t)).transpose()?;
    Ok(SelectionEntry {
        spec,
        axis_value,
        chi2: fit.chi2,
        m_eff: summary.m_eff,
        var_meff: summary.var_direct,
        aic_p: aicp(fit.chi2, summary.m_eff),
        rms_truth: rms,
        viable: is_viable(fit.chi2, summary.m_eff, data.len()),
        valid: fit.converged && summary.valid,
        slope: None,
        fit: Some(fit),
        summary: Some(summary),
    })
}

fn check_truth(data: &DataSet, truth: Option<&[f64]>) -> Result<()> {
    match truth {
        Some(t) if t.len() != data.len() => Err(Error::Dimension {
            what: "truth",
            expected: data.len(),
            got: t.len(),
        }),
        _ => Ok(()),
    }
}

/// Checks an order list: even, at least 2, increasing in steps of two.
pub fn validate_orders(orders: &[usize]) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::invalid("empty order list"));
    }
    if let Some(o) = orders.iter().find(|&&o| o < 2 || o % 2 != 0) {
        return Err(Error::invalid(format!(
            "Gauss-Hermite orders must be even and >= 2, got {o}"
        )));
    }
    if orders.windows(2).any(|w| w[1] != w[0] + 2) {
        return Err(Error::invalid("Gauss-Hermite orders must increase in steps of two"));
    }
    Ok(())
}

/// Fits and bootstraps each Gauss-Hermite order.
///
/// Each order is fit twice, from the moment-matched start and from the
/// previous order's solution padded with zeros, and the lower objective wins.
pub fn scan_parametric(
    data: &DataSet,
    orders: &[usize],
    plan: &BootstrapPlan,
    truth: Option<&[f64]>,
) -> Result<SelectionTable> {
    validate_orders(orders)?;
    check_truth(data, truth)?;
    let mut entries = Vec::with_capacity(orders.len());
    let mut previous: Option<Vec<f64>> = None;
    for &order in orders {
        let spec = ModelSpec::gauss_hermite(order)?;
        let mut fit = solver::fit(&spec, data, &Init::Auto)?;
        if let Some(prev) = previous.take() {
            let mut start = prev;
            start.resize(spec.n_params(data.len()), 0.0);
            let warm = solver::fit(&spec, data, &Init::Theta(start))?;
            if (warm.converged, -warm.objective) > (fit.converged, -fit.objective) {
                fit = warm;
            }
        }
        previous = Some(fit.theta_hat.clone());
        entries.push(build_entry(spec, order as f64, data, fit, plan, truth)?);
    }
    let selected = select_min(&entries);
    Ok(SelectionTable {
        axis: ScanAxis::Order,
        entries,
        selected,
        n_data: data.len(),
        plan: *plan,
    })
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Error::invalid("log grid needs 0 < lo < hi and at least 2 points"));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
        .collect())
}

/// Default penalty-strength grid: 25 points over `[1e4, 1e10]`, bracketing
/// the optimum of the Table-1 mocks at SNR 10 and 100 with the profile
/// normalization used in [`crate::data`]. `α_S` scales with the inverse
/// square of the signal amplitude, so rescaled data need a shifted grid.
pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(1e4, 1e10, 25).expect("static grid")
}

/// Fits and bootstraps the non-parametric family at each `α_S`, sharing one
/// plan so neighbouring entries see the same noise patterns, and attaches
/// forward-difference slopes in `log10 α`.
pub fn scan_alpha(
    data: &DataSet,
    grid: &[f64],
    plan: &BootstrapPlan,
    truth: Option<&[f64]>,
) -> Result<SelectionTable> {
    if grid.is_empty() {
        return Err(Error::invalid("empty alpha grid"));
    }
    if grid.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::invalid("alpha grid must be positive"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("alpha grid must be increasing"));
    }
    check_truth(data, truth)?;
    let mut entries = grid
        .iter()
        .map(|&alpha| {
            let spec = ModelSpec::nonparametric(alpha)?;
            let fit = solver::fit(&spec, data, &Init::Auto)?;
            build_entry(spec, alpha.log10(), data, fit, plan, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    for k in 0..entries.len().saturating_sub(1) {
        let (lo, hi) = (&entries[k], &entries[k + 1]);
        let dlog = hi.axis_value - lo.axis_value;
        let scatter = bootstrap::derivative_scatter(
            lo.summary.as_ref().expect("summary"),
            hi.summary.as_ref().expect("summary"),
        )?;
        let slope = AlphaSlope {
            dchi2_dlog10_alpha: (hi.chi2 - lo.chi2) / dlog,
            neg2_dmeff_dlog10_alpha: -2.0 * (hi.m_eff - lo.m_eff) / dlog,
            daicp_dlog10_alpha: (hi.aic_p - lo.aic_p) / dlog,
            scatter,
        };
        entries[k].slope = Some(slope);
    }
    let selected = select_min(&entries);
    Ok(SelectionTable {
        axis: ScanAxis::Log10Alpha,
        entries,
        selected,
        n_data: data.len(),
        plan: *plan,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl SelectionTable {
    pub fn selected_entry(&self) -> Option<&SelectionEntry> {
        self.selected.map(|i| &self.entries[i])
    }

    /// CSV with columns
    /// `axis_value,chi2,m_eff,var_meff,aic_p,rms_truth,viable,selected`; α scans
    /// append the forward-difference slope columns.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("axis_value,chi2,m_eff,var_meff,aic_p,rms_truth,viable,selected");
        let alpha = self.axis == ScanAxis::Log10Alpha;
        if alpha {
            out.push_str(",dchi2_dlog10alpha,neg2_dmeff_dlog10alpha,daicp_dlog10alpha,var_dmeff");
        }
        out.push('\n');
        for (k, e) in self.entries.iter().enumerate() {
            let _ = write!(
                out,
                "{},{:e},{:e},{},{:e},{},{},{}",
                e.axis_value,
                e.chi2,
                e.m_eff,
                opt(e.var_meff),
                e.aic_p,
                opt(e.rms_truth),
                e.viable,
                self.selected == Some(k)
            );
            if alpha {
                let s = e.slope.as_ref();
                let _ = write!(
                    out,
                    ",{},{},{},{}",
                    opt(s.map(|s| s.dchi2_dlog10_alpha)),
                    opt(s.map(|s| s.neg2_dmeff_dlog10_alpha)),
                    opt(s.map(|s| s.daicp_dlog10_alpha)),
                    opt(s.and_then(|s| s.scatter.var_dm_eff)),
                );
            }
            out.push('\n');
        }
        out
    }

    /// Per-iteration audit rows `kappa,m_eff_kappa,chi2_boot` for one entry.
    pub fn iterations_csv(&self, index: usize) -> Option<String> {
        let s = self.entries.get(index)?.summary.as_ref()?;
        let mut out = String::from("kappa,m_eff_kappa,chi2_boot\n");
        for ((k, m), c) in s.kappas.iter().zip(&s.m_eff_per_iter).zip(&s.chi2_boot_per_iter) {
            let _ = writeln!(out, "{k},{m:e},{c:e}");
        }
        Some(out)
    }
}
