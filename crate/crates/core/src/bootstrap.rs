//! Bootstrap estimate of the effective number of free parameters.
//!
//! For each iteration `κ` a resample `z^κ = f(θ̂_y) + N(0, ε)` is refit with
//! the same model and
//!
//! ```text
//! m_eff^κ = Σ_i a_i b_i,  a_i = (f_i(θ̂_z) - f_i(θ̂_y)) / ε_i,  b_i = (z_i - f_i(θ̂_y)) / ε_i
//! ```
//!
//! `m_eff` is the mean over iterations. Noise streams depend only on
//! `(master_seed, κ)`, so every model evaluated with the same plan sees the
//! same noise patterns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};
use crate::solver::{self, FitResult, LmOptions, SmoothingSystem};

/// Largest fraction of failed refits for which a summary is still valid.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    n_boot: usize,
    master_seed: u64,
}

impl BootstrapPlan {
    pub fn new(n_boot: usize, master_seed: u64) -> Result<Self> {
        if n_boot == 0 {
            return Err(Error::invalid("n_boot must be at least 1"));
        }
        Ok(BootstrapPlan {
            n_boot,
            master_seed,
        })
    }

    pub fn n_boot(&self) -> usize {
        self.n_boot
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Iteration indices `1..=n_boot`.
    pub fn kappas(&self) -> impl Iterator<Item = usize> + '_ {
        1..=self.n_boot
    }

    /// `n` standard normal deviates of stream `κ`: ChaCha8 keyed by
    /// `master_seed`, stream number `κ`.
    pub fn unit_noise(&self, kappa: usize, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(kappa as u64);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Bootstrap resample `z_i = f_i + ε_i · n_i` with `n` from stream `κ`.
pub fn make_bootstrap(
    fitted: &[f64],
    data: &DataSet,
    plan: &BootstrapPlan,
    kappa: usize,
) -> Result<DataSet> {
    if fitted.len() != data.len() {
        return Err(Error::Dimension {
            what: "fitted values",
            expected: data.len(),
            got: fitted.len(),
        });
    }
    let noise = plan.unit_noise(kappa, data.len());
    let z = fitted
        .iter()
        .zip(data.eps())
        .zip(noise)
        .map(|((f, e), n)| f + e * n)
        .collect();
    data.with_y(z)
}

/// One bootstrap contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MeffSample {
    pub m_eff: f64,
    /// Normalized refit response `a_i`.
    pub a: Vec<f64>,
    /// Normalized bootstrap noise `b_i`.
    pub b: Vec<f64>,
}

/// `m_eff^κ = Σ a_i b_i` for one refit.
pub fn meff_single(
    fitted_y: &[f64],
    fitted_z: &[f64],
    z: &DataSet,
    data: &DataSet,
) -> Result<MeffSample> {
    let n = data.len();
    for (what, len) in [("fitted_y", fitted_y.len()), ("fitted_z", fitted_z.len()), ("z", z.len())] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let eps = data.eps();
    let a: Vec<f64> = (0..n).map(|i| (fitted_z[i] - fitted_y[i]) / eps[i]).collect();
    let b: Vec<f64> = (0..n).map(|i| (z.y()[i] - fitted_y[i]) / eps[i]).collect();
    let m_eff = a.iter().zip(&b).map(|(a, b)| a * b).sum();
    Ok(MeffSample { m_eff, a, b })
}

/// Result of refitting one resample.
#[derive(Debug, Clone, PartialEq)]
pub struct Refit {
    pub fitted: Vec<f64>,
    pub converged: bool,
}

/// Per-point moments over iterations, plus the decompositions of
/// `Var(m_eff^κ)` built from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPointMoments {
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub var_a: Vec<f64>,
    pub var_b: Vec<f64>,
    pub cov_ab: Vec<f64>,
    pub cov_a2_b2: Vec<f64>,
    pub var_a2: Vec<f64>,
    pub mean_a2: Vec<f64>,
    /// Sample variance of `c_i = a_i b_i`.
    pub var_c: Vec<f64>,
}

/// Scatter of `m_eff^κ` reconstructed from per-point contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BienaymeScatter {
    pub per_point: PerPointMoments,
    /// `Σ_i Var(c_i)`.
    pub sum_var_c: f64,
    /// `Σ_{i≠j} Cov(c_i, c_j)`.
    pub sum_cov_offdiag: f64,
    /// `Var(m_eff^κ) = Σ Var(c_i) + Σ_{i≠j} Cov(c_i, c_j)`.
    pub var_meff_kappa: f64,
    /// `Var(m_eff) = Var(m_eff^κ) / N_boot`.
    pub var_meff: f64,
    /// `Σ_i Var(c_i)` from the product-moment decomposition
    /// `Cov(a², b²) - [Cov(a, b) + E a E b]² + (Var a + (E a)²)(Var b + (E b)²)`.
    pub sum_var_c_product_form: f64,
    /// `Σ_i [Cov(a², b²) - Cov(a, b)² + Var(a²)]`, with `E b = 0`, `Var b = 1`
    /// substituted and the last term written as `Var(a²)`.
    pub sum_var_c_simplified_var_a2: f64,
    /// As above with the last term `E(a²)`, which is what the substitution gives.
    pub sum_var_c_simplified_mean_a2: f64,
}

fn col(m: &[Vec<f64>], i: usize) -> impl Iterator<Item = f64> + '_ {
    m.iter().map(move |r| r[i])
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Bienaymé reconstruction of `Var(m_eff^κ)` from per-iteration `a` and `b`
/// vectors (`a[κ][i]`). All covariances are sample covariances with the
/// `1/(K-1)` normalization, so `var_meff_kappa` equals the sample variance of
/// `Σ_i a_i b_i` up to rounding.
pub fn scatter_bienayme(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<BienaymeScatter> {
    let k = a.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "scatter needs at least 2 bootstrap iterations, got {k}"
        )));
    }
    if b.len() != k {
        return Err(Error::Dimension {
            what: "b iterations",
            expected: k,
            got: b.len(),
        });
    }
    let n = a[0].len();
    if a.iter().chain(b).any(|row| row.len() != n) {
        return Err(Error::invalid("ragged bootstrap samples"));
    }
    let kf = k as f64;
    let unbias = kf / (kf - 1.0);
    let c: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(ar, br)| ar.iter().zip(br).map(|(x, y)| x * y).collect())
        .collect();

    let mut pp = PerPointMoments {
        mean_a: vec![0.0; n],
        mean_b: vec![0.0; n],
        var_a: vec![0.0; n],
        var_b: vec![0.0; n],
        cov_ab: vec![0.0; n],
        cov_a2_b2: vec![0.0; n],
        var_a2: vec![0.0; n],
        mean_a2: vec![0.0; n],
        var_c: vec![0.0; n],
    };
    let mut mean_c = vec![0.0; n];
    let (mut product_form, mut simp_var, mut simp_mean) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let ea = mean(col(a, i), k);
        let eb = mean(col(b, i), k);
        let ec = mean(col(&c, i), k);
        let ea2 = mean(col(a, i).map(|v| v * v), k);
        let eb2 = mean(col(b, i).map(|v| v * v), k);
        // population (1/K) central moments
        let var_a = mean(col(a, i).map(|v| (v - ea).powi(2)), k);
        let var_b = mean(col(b, i).map(|v| (v - eb).powi(2)), k);
        let cov_ab = mean(col(a, i).zip(col(b, i)).map(|(x, y)| (x - ea) * (y - eb)), k);
        let cov_a2b2 = mean(
            col(a, i)
                .zip(col(b, i))
                .map(|(x, y)| (x * x - ea2) * (y * y - eb2)),
            k,
        );
        let var_a2 = mean(col(a, i).map(|v| (v * v - ea2).powi(2)), k);
        let var_c = mean(col(&c, i).map(|v| (v - ec).powi(2)), k);

        product_form += unbias
            * (cov_a2b2 - (cov_ab + ea * eb).powi(2) + (var_a + ea * ea) * (var_b + eb * eb));
        simp_var += unbias * (cov_a2b2 - cov_ab * cov_ab + var_a2);
        simp_mean += unbias * (cov_a2b2 - cov_ab * cov_ab + ea2);

        pp.mean_a[i] = ea;
        pp.mean_b[i] = eb;
        pp.var_a[i] = unbias * var_a;
        pp.var_b[i] = unbias * var_b;
        pp.cov_ab[i] = unbias * cov_ab;
        pp.cov_a2_b2[i] = unbias * cov_a2b2;
        pp.var_a2[i] = unbias * var_a2;
        pp.mean_a2[i] = ea2;
        pp.var_c[i] = unbias * var_c;
        mean_c[i] = ec;
    }

    let centered: Vec<Vec<f64>> = c
        .iter()
        .map(|r| r.iter().zip(&mean_c).map(|(v, m)| v - m).collect())
        .collect();
    let sum_var_c: f64 = pp.var_c.iter().sum();
    let mut sum_cov_offdiag = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let cov: f64 = centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / (kf - 1.0);
                sum_cov_offdiag += cov;
            }
        }
    }
    let var_meff_kappa = (sum_var_c + sum_cov_offdiag).max(0.0);
    Ok(BienaymeScatter {
        per_point: pp,
        sum_var_c,
        sum_cov_offdiag,
        var_meff_kappa,
        var_meff: var_meff_kappa / kf,
        sum_var_c_product_form: product_form,
        sum_var_c_simplified_var_a2: simp_var,
        sum_var_c_simplified_mean_a2: simp_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub plan: BootstrapPlan,
    /// Iterations that converged, in increasing order; the per-iteration
    /// arrays below are aligned with it.
    pub kappas: Vec<usize>,
    pub m_eff_per_iter: Vec<f64>,
    /// χ² of each refit against its own resample (`χ²_posterior`).
    pub chi2_boot_per_iter: Vec<f64>,
    /// `Σ b_i²`, the resample's χ² against the original fit (`χ²_prior`).
    pub chi2_prior_per_iter: Vec<f64>,
    pub m_eff: f64,
    /// Sample variance of `m_eff^κ` over `N_boot`; absent for a single iteration.
    pub var_direct: Option<f64>,
    pub var_bienayme: Option<f64>,
    pub scatter: Option<BienaymeScatter>,
    pub n_failed: usize,
    pub valid: bool,
}

impl BootstrapSummary {
    pub fn n_used(&self) -> usize {
        self.kappas.len()
    }

    pub fn chi2_prior_mean(&self) -> f64 {
        mean(self.chi2_prior_per_iter.iter().copied(), self.n_used().max(1))
    }

    pub fn chi2_posterior_mean(&self) -> f64 {
        mean(self.chi2_boot_per_iter.iter().copied(), self.n_used().max(1))
    }
}

/// Sample variance with `1/(n-1)` normalization.
pub fn sample_variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v.iter().copied(), v.len());
    Some(v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

struct IterOutcome {
    kappa: usize,
    sample: MeffSample,
    chi2_post: f64,
    chi2_prior: f64,
}

/// Runs the bootstrap with an arbitrary refit procedure. Iterations run in
/// parallel and are reduced in `κ` order.
pub fn run_bootstrap_with<F>(
    data: &DataSet,
    fitted_y: &[f64],
    plan: &BootstrapPlan,
    refit: F,
) -> Result<BootstrapSummary>
where
    F: Fn(&DataSet) -> Result<Refit> + Sync,
{
    if fitted_y.len() != data.len() {
        return Err(Error::Dimension {
            what: "fitted values",
            expected: data.len(),
            got: fitted_y.len(),
        });
    }
    let outcomes: Vec<Option<IterOutcome>> = (1..=plan.n_boot())
        .into_par_iter()
        .map(|kappa| -> Result<Option<IterOutcome>> {
            let z = make_bootstrap(fitted_y, data, plan, kappa)?;
            let refit = match refit(&z) {
                Ok(r) if r.converged => r,
                _ => return Ok(None),
            };
            let sample = meff_single(fitted_y, &refit.fitted, &z, data)?;
            let chi2_post = z.chi2(&refit.fitted);
            let chi2_prior = sample.b.iter().map(|b| b * b).sum();
            Ok(Some(IterOutcome {
                kappa,
                sample,
                chi2_post,
                chi2_prior,
            }))
        })
        .collect::<Result<_>>()?;

    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    let used: Vec<IterOutcome> = outcomes.into_iter().flatten().collect();
    let kappas: Vec<usize> = used.iter().map(|o| o.kappa).collect();
    let m_eff_per_iter: Vec<f64> = used.iter().map(|o| o.sample.m_eff).collect();
    let m_eff = if used.is_empty() {
        f64::NAN
    } else {
        mean(m_eff_per_iter.iter().copied(), used.len())
    };
    let var_direct = sample_variance(&m_eff_per_iter).map(|v| v / used.len() as f64);
    let scatter = if used.len() >= 2 {
        let a: Vec<Vec<f64>> = used.iter().map(|o| o.sample.a.clone()).collect();
        let b: Vec<Vec<f64>> = used.iter().map(|o| o.sample.b.clone()).collect();
        Some(scatter_bienayme(&a, &b)?)
    } else {
        None
    };
    let valid = !used.is_empty() && (n_failed as f64) <= MAX_FAILED_FRACTION * plan.n_boot() as f64;
    Ok(BootstrapSummary {
        plan: *plan,
        kappas,
        m_eff_per_iter,
        chi2_boot_per_iter: used.iter().map(|o| o.chi2_post).collect(),
        chi2_prior_per_iter: used.iter().map(|o| o.chi2_prior).collect(),
        m_eff,
        var_direct,
        var_bienayme: scatter.as_ref().map(|s| s.var_meff),
        scatter,
        n_failed,
        valid,
    })
}

/// Runs `N_boot` refits of `spec`, each warm-started at `θ̂_y`.
pub fn run_bootstrap(
    spec: &ModelSpec,
    data: &DataSet,
    fit_y: &FitResult,
    plan: &BootstrapPlan,
) -> Result<BootstrapSummary> {
    spec.validate()?;
    match spec.kind {
        ModelKind::NonParametric => {
            let system = SmoothingSystem::new(data.eps(), spec.alpha)?;
            run_bootstrap_with(data, &fit_y.fitted, plan, |z| {
                Ok(Refit {
                    fitted: system.smooth(z.y()),
                    converged: true,
                })
            })
        }
        ModelKind::GaussHermite { .. } => {
            let opts = LmOptions::default();
            run_bootstrap_with(data, &fit_y.fitted, plan, |z| {
                let fit = solver::fit_lm(spec, z, &fit_y.theta_hat, &opts)?;
                Ok(Refit {
                    fitted: fit.fitted,
                    converged: fit.converged,
                })
            })
        }
    }
}

/// Difference of two bootstrap summaries evaluated with the same plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeScatter {
    /// Mean of `m_eff^κ(α + dα) - m_eff^κ(α)` over shared iterations.
    pub dm_eff: f64,
    /// `Var(dm^κ) = Var(m^κ(α)) + Var(m^κ(α+dα)) - 2 Cov(…)`.
    pub var_dm_eff_kappa: f64,
    /// `Var(dm^κ) / N_boot`.
    pub var_dm_eff: Option<f64>,
    /// `(Var(m^κ(α)) + Var(m^κ(α+dα))) / N_boot`: the value without common
    /// random numbers.
    pub var_dm_eff_independent: Option<f64>,
    /// Same quantities for the refit χ².
    pub dchi2_boot: f64,
    pub var_dchi2_boot: Option<f64>,
    pub var_dchi2_boot_independent: Option<f64>,
    pub n_shared: usize,
}

fn difference_variance(lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
    let n = lo.len();
    if n < 2 {
        return None;
    }
    let (ml, mh) = (mean(lo.iter().copied(), n), mean(hi.iter().copied(), n));
    let var_l = sample_variance(lo)?;
    let var_h = sample_variance(hi)?;
    let cov = lo.iter().zip(hi).map(|(a, b)| (a - ml) * (b - mh)).sum::<f64>() / (n - 1) as f64;
    Some(((var_l + var_h - 2.0 * cov).max(0.0), var_l + var_h))
}

/// Scatter of `m_eff(α + dα) - m_eff(α)` using the covariance between the two
/// summaries. Both must come from the same plan.
pub fn derivative_scatter(
    lo: &BootstrapSummary,
    hi: &BootstrapSummary,
) -> Result<DerivativeScatter> {
    if lo.plan != hi.plan {
        return Err(Error::PlanMismatch(format!(
            "{:?} vs {:?}",
            lo.plan, hi.plan
        )));
    }
    // pair by κ; only iterations that converged on both sides contribute
    let (mut ml, mut mh, mut cl, mut ch) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < lo.kappas.len() && j < hi.kappas.len() {
        match lo.kappas[i].cmp(&hi.kappas[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ml.push(lo.m_eff_per_iter[i]);
                mh.push(hi.m_eff_per_iter[j]);
                cl.push(lo.chi2_boot_per_iter[i]);
                ch.push(hi.chi2_boot_per_iter[j]);
                i += 1;
                j += 1;
            }
        }
    }
    let n = ml.len();
    if n == 0 {
        return Err(Error::invalid("no shared bootstrap iterations"));
    }
    let nf = n as f64;
    let dm_eff = mean(mh.iter().zip(&ml).map(|(h, l)| h - l), n);
    let dchi2_boot = mean(ch.iter().zip(&cl).map(|(h, l)| h - l), n);
    let m = difference_variance(&ml, &mh);
    let c = difference_variance(&cl, &ch);
    Ok(DerivativeScatter {
        dm_eff,
        var_dm_eff_kappa: m.map(|v| v.0).unwrap_or(0.0),
        var_dm_eff: m.map(|v| v.0 / nf),
        var_dm_eff_independent: m.map(|v| v.1 / nf),
        dchi2_boot,
        var_dchi2_boot: c.map(|v| v.0 / nf),
        var_dchi2_boot_independent: c.map(|v| v.1 / nf),
        n_shared: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mock, MockConfig};
    use crate::solver::{fit, Init};

    fn fig1(snr: f64, seed: u64) -> DataSet {
        generate_mock(&MockConfig::paper_default(snr, seed)).unwrap().data
    }

    #[test]
    fn streams_depend_only_on_seed_and_kappa() {
        let plan = BootstrapPlan::new(10, 77).unwrap();
        assert_eq!(plan.unit_noise(3, 71), plan.unit_noise(3, 71));
        assert_ne!(plan.unit_noise(3, 71), plan.unit_noise(4, 71));
        let other = BootstrapPlan::new(500, 77).unwrap();
        assert_eq!(plan.unit_noise(3, 71), other.unit_noise(3, 71));
        assert!(BootstrapPlan::new(0, 1).is_err());
    }

    #[test]
    fn resample_statistics() {
        let data = fig1(10.0, 4);
        let fitted = data.y().to_vec();
        let plan = BootstrapPlan::new(10_000, 5).unwrap();
        let n = data.len();
        let mut sum = vec![0.0; n];
        let mut sum2 = vec![0.0; n];
        for k in plan.kappas() {
            let z = make_bootstrap(&fitted, &data, &plan, k).unwrap();
            for i in 0..n {
                let r = (z.y()[i] - fitted[i]) / data.eps()[i];
                sum[i] += r;
                sum2[i] += r * r;
            }
        }
        for i in 0..n {
            let m = sum[i] / 1e4;
            let v = sum2[i] / 1e4 - m * m;
            assert!(m.abs() < 0.05, "mean {m} at {i}");
            assert!((v - 1.0).abs() < 0.05, "var {v} at {i}");
        }
    }

    #[test]
    fn resample_is_model_independent() {
        let data = fig1(10.0, 4);
        let plan = BootstrapPlan::new(5, 9).unwrap();
        let f1 = fit(&ModelSpec::nonparametric(1e9).unwrap(), &data, &Init::Auto).unwrap();
        let f2 = fit(&ModelSpec::gauss_hermite(6).unwrap(), &data, &Init::Auto).unwrap();
        let z1 = make_bootstrap(&f1.fitted, &data, &plan, 2).unwrap();
        let z2 = make_bootstrap(&f2.fitted, &data, &plan, 2).unwrap();
        for i in 0..data.len() {
            let n1 = (z1.y()[i] - f1.fitted[i]) / data.eps()[i];
            let n2 = (z2.y()[i] - f2.fitted[i]) / data.eps()[i];
            assert!((n1 - n2).abs() < 1e-9);
        }
    }

    #[test]
    fn no_response_gives_zero() {
        let data = fig1(10.0, 4);
        let f = data.y().to_vec();
        let plan = BootstrapPlan::new(1, 1).unwrap();
        let z = make_bootstrap(&f, &data, &plan, 1).unwrap();
        let s = meff_single(&f, &f, &z, &data).unwrap();
        assert!(s.a.iter().all(|&v| v == 0.0));
        assert_eq!(s.m_eff, 0.0);
        assert!(meff_single(&f, &f[1..], &z, &data).is_err());
    }

    #[test]
    fn interpolation_meff_is_chi2_distributed() {
        let data = fig1(10.0, 6);
        let spec = ModelSpec::nonparametric(0.0).unwrap();
        let fy = fit(&spec, &data, &Init::Auto).unwrap();
        let plan = BootstrapPlan::new(500, 2024).unwrap();
        let s = run_bootstrap(&spec, &data, &fy, &plan).unwrap();
        for (k, m) in s.m_eff_per_iter.iter().enumerate() {
            assert!((m - s.chi2_prior_per_iter[k]).abs() < 1e-9);
        }
        let tol = 3.0 * (2.0 * 71.0 / 500.0f64).sqrt();
        assert!((s.m_eff - 71.0).abs() <= tol, "{}", s.m_eff);
        let var = s.scatter.as_ref().unwrap().var_meff_kappa;
        assert!((var - 142.0).abs() <= 0.3 * 142.0, "{var}");
        assert!(s.chi2_boot_per_iter.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn bienayme_matches_direct_variance() {
        let data = fig1(100.0, 6);
        for alpha in [1e8, 1e10, 1e12] {
            let spec = ModelSpec::nonparametric(alpha).unwrap();
            let fy = fit(&spec, &data, &Init::Auto).unwrap();
            let plan = BootstrapPlan::new(40, 3).unwrap();
            let s = run_bootstrap(&spec, &data, &fy, &plan).unwrap();
            let direct = s.var_direct.unwrap();
            let sc = s.scatter.unwrap();
            assert!((sc.var_meff - direct).abs() <= 1e-9 * direct);
            assert!((sc.sum_var_c_product_form - sc.sum_var_c).abs() <= 1e-9 * sc.sum_var_c);
        }
    }

    #[test]
    fn constant_contributions_have_no_scatter() {
        let a = vec![vec![1.0, 2.0, 0.5]; 6];
        let b = vec![vec![0.3, -1.0, 2.0]; 6];
        let s = scatter_bienayme(&a, &b).unwrap();
        assert_eq!(s.var_meff_kappa, 0.0);
        assert!(scatter_bienayme(&a[..1], &b[..1]).is_err());
    }

    #[test]
    fn single_iteration_has_no_variance() {
        let data = fig1(10.0, 6);
        let spec = ModelSpec::nonparametric(1e9).unwrap();
        let fy = fit(&spec, &data, &Init::Auto).unwrap();
        let s = run_bootstrap(&spec, &data, &fy, &BootstrapPlan::new(1, 8).unwrap()).unwrap();
        assert_eq!(s.m_eff, s.m_eff_per_iter[0]);
        assert!(s.var_direct.is_none());
        assert!(s.var_bienayme.is_none());
        assert!(s.valid);
    }

    #[test]
    fn warm_and_cold_starts_agree_on_linear_family() {
        let data = fig1(100.0, 12);
        let spec = ModelSpec::nonparametric(1e9).unwrap();
        let fy = fit(&spec, &data, &Init::Auto).unwrap();
        let plan = BootstrapPlan::new(5, 1).unwrap();
        let tight = LmOptions {
            gradient_tol: 1e-13,
            relative_change_tol: 0.0,
            ..LmOptions::default()
        };
        let lm_from = |start: fn(&DataSet, &FitResult) -> Vec<f64>| {
            run_bootstrap_with(&data, &fy.fitted, &plan, |z| {
                let f = solver::fit_lm(&spec, z, &start(z, &fy), &tight)?;
                Ok(Refit {
                    fitted: f.fitted,
                    converged: true,
                })
            })
            .unwrap()
        };
        let exact = run_bootstrap(&spec, &data, &fy, &plan).unwrap();
        let warm = lm_from(|_, fy| fy.theta_hat.clone());
        let cold = lm_from(|z, _| z.y().to_vec());
        for k in 0..plan.n_boot() {
            let (e, w, c) = (exact.m_eff_per_iter[k], warm.m_eff_per_iter[k], cold.m_eff_per_iter[k]);
            assert!((w - c).abs() < 1e-8 * w.abs().max(1.0), "{w} vs {c}");
            assert!((e - w).abs() < 1e-8 * e.abs().max(1.0), "{e} vs {w}");
        }
    }

    #[test]
    fn derivative_scatter_basics() {
        let data = fig1(100.0, 12);
        let plan = BootstrapPlan::new(30, 1).unwrap();
        let run = |alpha: f64| {
            let spec = ModelSpec::nonparametric(alpha).unwrap();
            let fy = fit(&spec, &data, &Init::Auto).unwrap();
            run_bootstrap(&spec, &data, &fy, &plan).unwrap()
        };
        let s1 = run(1e9);
        let same = derivative_scatter(&s1, &s1).unwrap();
        assert_eq!(same.dm_eff, 0.0);
        assert_eq!(same.var_dm_eff, Some(0.0));
        let s2 = run(10f64.powf(9.25));
        let d = derivative_scatter(&s1, &s2).unwrap();
        assert!(d.var_dm_eff.unwrap() < d.var_dm_eff_independent.unwrap());
        assert!(d.dm_eff < 0.0);
        let other = {
            let spec = ModelSpec::nonparametric(1e9).unwrap();
            let fy = fit(&spec, &data, &Init::Auto).unwrap();
            run_bootstrap(&spec, &data, &fy, &BootstrapPlan::new(30, 2).unwrap()).unwrap()
        };
        assert!(matches!(derivative_scatter(&s1, &other), Err(Error::PlanMismatch(_))));
    }

    #[test]
    fn failed_refits_are_counted() {
        let data = fig1(10.0, 1);
        let f = data.y().to_vec();
        let plan = BootstrapPlan::new(20, 1).unwrap();
        let s = run_bootstrap_with(&data, &f, &plan, |z| {
            Ok(Refit {
                fitted: z.y().to_vec(),
                converged: z.y()[0] > f[0],
            })
        })
        .unwrap();
        assert_eq!(s.n_failed + s.n_used(), 20);
        assert!(s.n_failed > 2);
        assert!(!s.valid);
    }
}
