//! Scripted figure reproductions: multi-mock scans, averages over mock
//! realizations and `N_boot` sensitivity.
//!
//! Everything is a deterministic function of the [`ExperimentConfig`]:
//! mock `j` uses seed `master_seed + j`, every bootstrap uses `master_seed`,
//! and parallel work is reduced in index order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{self, BootstrapPlan};
use crate::data::{generate_mock, Mock, MockConfig};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::selection::{self, SelectionTable};
use crate::solver::{self, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Template for every mock; `snr_peak` and `seed` are overridden.
    pub mock: MockConfig,
    pub master_seed: u64,
    /// Peak SNR of the two selection figures.
    pub snr_high: f64,
    pub snr_low: f64,
    /// Mocks per selection figure.
    pub n_mocks: usize,
    /// Mocks in the averaged figure.
    pub n_mocks_average: usize,
    pub orders: Vec<usize>,
    /// Orders of the counted-parameter check.
    pub meff_orders: Vec<usize>,
    pub alpha_grid: Vec<f64>,
    /// `N_boot` of the counted-parameter check.
    pub n_boot_meff: usize,
    /// `N_boot` of the selection scans.
    pub n_boot_scan: usize,
    /// `N_boot` ladder of the scatter figure.
    pub n_boot_values: Vec<usize>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn paper_default(master_seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            mock: MockConfig::paper_default(100.0, master_seed),
            master_seed,
            snr_high: 100.0,
            snr_low: 10.0,
            n_mocks: 5,
            n_mocks_average: 20,
            orders: (4..=30).step_by(2).collect(),
            meff_orders: (4..=20).step_by(2).collect(),
            alpha_grid: selection::default_alpha_grid(),
            n_boot_meff: 500,
            n_boot_scan: 100,
            n_boot_values: vec![1, 5, 10, 50, 500, 2500],
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mock.validate()?;
        if self.n_mocks == 0 || self.n_mocks_average == 0 {
            return Err(Error::invalid("n_mocks must be >= 1"));
        }
        if self.n_boot_meff == 0 || self.n_boot_scan == 0 || self.n_boot_values.contains(&0) {
            return Err(Error::invalid("every N_boot must be >= 1"));
        }
        if self.n_boot_values.is_empty() {
            return Err(Error::invalid("empty N_boot ladder"));
        }
        if !(self.snr_high > 0.0 && self.snr_low > 0.0) {
            return Err(Error::invalid("SNR must be > 0"));
        }
        selection::validate_orders(&self.orders)?;
        selection::validate_orders(&self.meff_orders)?;
        if self.alpha_grid.len() < 2
            || self.alpha_grid.iter().any(|&a| !(a > 0.0 && a.is_finite()))
            || self.alpha_grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::invalid("alpha grid must be positive, increasing, >= 2 points"));
        }
        Ok(())
    }

    fn plan(&self, n_boot: usize) -> Result<BootstrapPlan> {
        BootstrapPlan::new(n_boot, self.master_seed)
    }

    /// Mock `j` at the given SNR.
    pub fn mock_at(&self, snr: f64, j: usize) -> Result<Mock> {
        let mut cfg = self.mock.clone();
        cfg.snr_peak = snr;
        cfg.seed = self.master_seed.wrapping_add(j as u64);
        generate_mock(&cfg)
    }

    /// SHA-256 of the canonical JSON encoding, excluding the output
    /// location.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&cfg).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One row of the counted-parameter check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeffRow {
    pub order: usize,
    pub chi2: f64,
    pub m_eff: f64,
    pub var_meff: Option<f64>,
    pub converged: bool,
    pub n_failed: usize,
}

/// `m_eff` against `n_GH` on mock 0 at the high SNR.
pub fn meff_vs_order(cfg: &ExperimentConfig) -> Result<Vec<MeffRow>> {
    let mock = cfg.mock_at(cfg.snr_high, 0)?;
    let plan = cfg.plan(cfg.n_boot_meff)?;
    cfg.meff_orders
        .iter()
        .map(|&order| {
            let spec = ModelSpec::gauss_hermite(order)?;
            let fit = solver::fit(&spec, &mock.data, &Init::Auto)?;
            let s = bootstrap::run_bootstrap(&spec, &mock.data, &fit, &plan)?;
            Ok(MeffRow {
                order,
                chi2: fit.chi2,
                m_eff: s.m_eff,
                var_meff: s.var_direct,
                converged: fit.converged,
                n_failed: s.n_failed,
            })
        })
        .collect()
}

/// Order and α scans of one mock.
#[derive(Debug, Clone)]
pub struct MockScan {
    pub mock_index: usize,
    pub order: SelectionTable,
    pub alpha: SelectionTable,
}

impl MockScan {
    /// Index of the smallest `rms_truth` entry of a table.
    pub fn best_rms(table: &SelectionTable) -> Option<usize> {
        table
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.rms_truth.map(|r| (i, r)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// Order and α scans for `n_mocks` mocks at one SNR and `N_boot`.
pub fn mock_scans(
    cfg: &ExperimentConfig,
    snr: f64,
    n_boot: usize,
    n_mocks: usize,
    with_alpha: bool,
) -> Result<Vec<MockScan>> {
    let plan = cfg.plan(n_boot)?;
    (0..n_mocks)
        .into_par_iter()
        .map(|j| {
            let mock = cfg.mock_at(snr, j)?;
            let order = selection::scan_parametric(&mock.data, &cfg.orders, &plan, Some(&mock.truth))?;
            let alpha = if with_alpha {
                selection::scan_alpha(&mock.data, &cfg.alpha_grid, &plan, Some(&mock.truth))?
            } else {
                SelectionTable {
                    axis: selection::ScanAxis::Log10Alpha,
                    entries: Vec::new(),
                    selected: None,
                    n_data: mock.data.len(),
                    plan,
                }
            };
            Ok(MockScan {
                mock_index: j,
                order,
                alpha,
            })
        })
        .collect()
}

/// α scan of mock 0 at the high SNR for each `N_boot` of the ladder.
pub fn nboot_ladder(cfg: &ExperimentConfig) -> Result<Vec<SelectionTable>> {
    let mock = cfg.mock_at(cfg.snr_high, 0)?;
    cfg.n_boot_values
        .iter()
        .map(|&n| {
            let plan = cfg.plan(n)?;
            selection::scan_alpha(&mock.data, &cfg.alpha_grid, &plan, Some(&mock.truth))
        })
        .collect()
}

/// Per-order means over mocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub order: usize,
    pub chi2: f64,
    pub m_eff: f64,
    pub aic_p: f64,
    pub rms_truth: f64,
}

pub fn average_over_mocks(scans: &[MockScan]) -> Vec<AverageRow> {
    let Some(first) = scans.first() else {
        return Vec::new();
    };
    let k = scans.len() as f64;
    (0..first.order.entries.len())
        .map(|i| {
            let avg = |f: &dyn Fn(&selection::SelectionEntry) -> f64| {
                scans.iter().map(|s| f(&s.order.entries[i])).sum::<f64>() / k
            };
            AverageRow {
                order: first.order.entries[i].axis_value as usize,
                chi2: avg(&|e| e.chi2),
                m_eff: avg(&|e| e.m_eff),
                aic_p: avg(&|e| e.aic_p),
                rms_truth: avg(&|e| e.rms_truth.unwrap_or(f64::NAN)),
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn scans_csv(scans: &[MockScan], alpha: bool, header: &[String]) -> String {
    let mut out = String::new();
    for c in header {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("mock,axis_value,chi2,m_eff,chi2_plus_meff,aic_p,rms_truth,viable,valid,selected\n");
    for s in scans {
        let t = if alpha { &s.alpha } else { &s.order };
        for (i, e) in t.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{},{},{},{}",
                s.mock_index,
                e.axis_value,
                e.chi2,
                e.m_eff,
                e.chi2 + e.m_eff,
                e.aic_p,
                fmt_opt(e.rms_truth),
                e.viable,
                e.valid,
                t.selected == Some(i)
            );
        }
    }
    out
}

fn selection_csv(scans: &[MockScan], header: &[String]) -> String {
    let mut out = String::new();
    for c in header {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("mock,axis,selected,best_rms\n");
    for s in scans {
        for (name, t) in [("order", &s.order), ("log10_alpha", &s.alpha)] {
            if t.entries.is_empty() {
                continue;
            }
            let at = |i: Option<usize>| i.map(|i| t.entries[i].axis_value.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{name},{},{}",
                s.mock_index,
                at(t.selected),
                at(MockScan::best_rms(t))
            );
        }
    }
    out
}

fn ladder_csv(table: &SelectionTable, header: &[String]) -> String {
    let mut out = String::new();
    for c in header {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(
        "log10_alpha,m_eff,sd_meff,sd_meff_bienayme,dmeff_dlog10alpha,sd_dmeff,sd_dmeff_independent,chi2,aic_p,rms_truth,selected\n",
    );
    for (i, e) in table.entries.iter().enumerate() {
        let s = e.summary.as_ref();
        let slope = e.slope.as_ref();
        let dlog = table
            .entries
            .get(i + 1)
            .map(|n| n.axis_value - e.axis_value)
            .unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{},{:e},{},{},{},{},{},{:e},{:e},{},{}",
            e.axis_value,
            e.m_eff,
            fmt_opt(e.var_meff.map(f64::sqrt)),
            fmt_opt(s.and_then(|s| s.var_bienayme).map(f64::sqrt)),
            fmt_opt(slope.map(|s| s.scatter.dm_eff / dlog)),
            fmt_opt(slope.and_then(|s| s.scatter.var_dm_eff).map(|v| v.sqrt() / dlog)),
            fmt_opt(slope.and_then(|s| s.scatter.var_dm_eff_independent).map(|v| v.sqrt() / dlog)),
            e.chi2,
            e.aic_p,
            fmt_opt(e.rms_truth),
            table.selected == Some(i)
        );
    }
    out
}

fn ladder_iterations_csv(table: &SelectionTable, header: &[String]) -> String {
    let mut out = String::new();
    for c in header {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("kappa,log10_alpha,m_eff_kappa,chi2_boot\n");
    for e in &table.entries {
        if let Some(s) = &e.summary {
            for ((k, m), c) in s.kappas.iter().zip(&s.m_eff_per_iter).zip(&s.chi2_boot_per_iter) {
                let _ = writeln!(out, "{k},{},{m:e},{c:e}", e.axis_value);
            }
        }
    }
    out
}

/// Record of one written file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub mock_seeds: Vec<u64>,
    /// `complete`, or `partial` when a figure failed.
    pub status: String,
    pub error: Option<String>,
    pub files: Vec<ManifestFile>,
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<ManifestFile>,
    header: Vec<String>,
}

impl Writer<'_> {
    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        self.files.push(ManifestFile {
            path: rel.to_string(),
            sha256: hex(&Sha256::digest(content.as_bytes())),
            bytes: content.len(),
        });
        Ok(())
    }

    fn header(&self, extra: &str) -> Vec<String> {
        let mut h = self.header.clone();
        h.push(extra.to_string());
        h
    }
}

fn write_figures(cfg: &ExperimentConfig, w: &mut Writer<'_>) -> Result<()> {
    let rows = meff_vs_order(cfg)?;
    let mut csv = String::new();
    for c in w.header(&format!("snr={} n_boot={}", cfg.snr_high, cfg.n_boot_meff)) {
        let _ = writeln!(csv, "# {c}");
    }
    csv.push_str("order,expected,m_eff,sd_meff,chi2,converged,n_failed\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:e},{},{:e},{},{}",
            r.order,
            r.order + 1,
            r.m_eff,
            fmt_opt(r.var_meff.map(f64::sqrt)),
            r.chi2,
            r.converged,
            r.n_failed
        );
    }
    w.write("fig3/meff_vs_order.csv", &csv)?;

    for (dir, snr) in [("fig4", cfg.snr_high), ("fig5", cfg.snr_low)] {
        let scans = mock_scans(cfg, snr, cfg.n_boot_scan, cfg.n_mocks, true)?;
        let h = w.header(&format!("snr={snr} n_boot={}", cfg.n_boot_scan));
        w.write(&format!("{dir}/order.csv"), &scans_csv(&scans, false, &h))?;
        w.write(&format!("{dir}/alpha.csv"), &scans_csv(&scans, true, &h))?;
        w.write(&format!("{dir}/selection.csv"), &selection_csv(&scans, &h))?;
    }

    let ladder = nboot_ladder(cfg)?;
    let mut sel = String::new();
    for c in w.header(&format!("snr={}", cfg.snr_high)) {
        let _ = writeln!(sel, "# {c}");
    }
    sel.push_str("n_boot,selected_log10_alpha,best_rms_log10_alpha\n");
    for (n, table) in cfg.n_boot_values.iter().zip(&ladder) {
        let h = w.header(&format!("snr={} n_boot={n}", cfg.snr_high));
        w.write(&format!("fig6/nboot_{n}.csv"), &ladder_csv(table, &h))?;
        if *n <= 50 {
            w.write(&format!("fig6/iterations_nboot_{n}.csv"), &ladder_iterations_csv(table, &h))?;
        }
        let at = |i: Option<usize>| i.map(|i| table.entries[i].axis_value.to_string()).unwrap_or_default();
        let _ = writeln!(sel, "{n},{},{}", at(table.selected), at(MockScan::best_rms(table)));
    }
    w.write("fig6/selection.csv", &sel)?;

    let single = mock_scans(cfg, cfg.snr_high, 1, cfg.n_mocks, true)?;
    let h = w.header(&format!("snr={} n_boot=1", cfg.snr_high));
    w.write("fig7/order.csv", &scans_csv(&single, false, &h))?;
    w.write("fig7/alpha.csv", &scans_csv(&single, true, &h))?;
    w.write("fig7/selection.csv", &selection_csv(&single, &h))?;

    let many = mock_scans(cfg, cfg.snr_high, cfg.n_boot_scan, cfg.n_mocks_average, false)?;
    let h = w.header(&format!(
        "snr={} n_boot={} n_mocks={}",
        cfg.snr_high, cfg.n_boot_scan, cfg.n_mocks_average
    ));
    w.write("fig8/per_mock.csv", &scans_csv(&many, false, &h))?;
    let mut avg = String::new();
    for c in &h {
        let _ = writeln!(avg, "# {c}");
    }
    avg.push_str("order,chi2_mean,m_eff_mean,aic_p_mean,rms_truth_mean\n");
    for r in average_over_mocks(&many) {
        let _ = writeln!(
            avg,
            "{},{:e},{:e},{:e},{:e}",
            r.order, r.chi2, r.m_eff, r.aic_p, r.rms_truth
        );
    }
    w.write("fig8/average.csv", &avg)?;
    Ok(())
}

/// Writes every figure bundle under `cfg.output_dir` followed by
/// `manifest.json`. On failure the manifest is still written, marked
/// `partial`, and the error is returned.
pub fn run_figure_suite(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let root = cfg.output_dir.as_path();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let config_hash = cfg.hash();
    let mut w = Writer {
        root,
        files: Vec::new(),
        header: vec![
            format!("config_hash={config_hash}"),
            format!("master_seed={}", cfg.master_seed),
        ],
    };
    let outcome = write_figures(cfg, &mut w);
    let n_seeds = cfg.n_mocks.max(cfg.n_mocks_average);
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_hash,
        master_seed: cfg.master_seed,
        mock_seeds: (0..n_seeds as u64).map(|j| cfg.master_seed.wrapping_add(j)).collect(),
        status: if outcome.is_ok() { "complete" } else { "partial" }.to_string(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        files: w.files,
    };
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    outcome.map(|_| manifest)
}
