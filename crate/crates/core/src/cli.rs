//! Command-line front end.
//!
//! Every flag may also be given in a flat TOML file passed with `--config`,
//! keyed by the flag name without its leading dashes (`nboot = 500`,
//! `out-dir = "figs"`).
//! Flags override the file, the file overrides built-in defaults. The
//! resolved values are hashed and written into every output for provenance.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bootstrap::BootstrapPlan;
use crate::data::{self, DataSet, MockConfig};
use crate::error::{Error, Result};
use crate::experiments::{self, hex, ExperimentConfig};
use crate::models::ModelSpec;
use crate::oracle;
use crate::selection::{self, ScanAxis};
use crate::solver::{self, Init};

#[derive(Debug, Parser)]
#[command(name = "aicp", version, about = "Model selection with bootstrap effective degrees of freedom")]
pub struct Cli {
    /// Flat TOML file of flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel fits.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a mock dataset and its noise-free truth.
    Mockgen(MockgenArgs),
    /// Fit one model to a dataset.
    Fit(FitArgs),
    /// Scan Gauss-Hermite orders or smoothing strengths and select by AIC_p.
    Scan(ScanArgs),
    /// Compare bootstrap m_eff with trace(H) for the linear family.
    Oracle(OracleArgs),
    /// Write the figure data bundles.
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
pub struct MockgenArgs {
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_data: Option<usize>,
    #[arg(long)]
    pub x_range_sigmas: Option<f64>,
    /// Dataset CSV (`x,y,eps`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Truth CSV (`x,y0`).
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Write `y = truth` (noise levels still follow `--snr`).
    #[arg(long)]
    pub noise_free: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `gh` or `nonparametric`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write the result JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// `order` or `alpha`.
    #[arg(long)]
    pub axis: Option<String>,
    /// Dataset CSV; without it a mock is generated from `--snr` and `--seed`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Truth CSV for the rms column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nboot: Option<usize>,
    /// `start:stop:step` or a comma list.
    #[arg(long)]
    pub orders: Option<String>,
    /// `lo:hi:n` (log-spaced) or a comma list.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nboot: Option<usize>,
    /// Comma list of α_S values, or `lo:hi:n`.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub n_mocks: Option<usize>,
    #[arg(long)]
    pub n_mocks_average: Option<usize>,
    #[arg(long)]
    pub nboot_meff: Option<usize>,
    #[arg(long)]
    pub nboot_scan: Option<usize>,
    /// Comma list.
    #[arg(long)]
    pub nboot_ladder: Option<String>,
    #[arg(long)]
    pub orders: Option<String>,
    #[arg(long)]
    pub meff_orders: Option<String>,
    #[arg(long)]
    pub grid: Option<String>,
}

/// Result of a command: JSON for stdout and whether all validity checks
/// passed.
#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub valid: bool,
}

/// Failure class, mapped to the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Run(_) => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Failure::Usage(msg) => json!({"error": msg, "kind": "usage"}),
            Failure::Run(e) => json!({"error": e.to_string(), "kind": error_kind(e)}),
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Invalid(_) | Error::TooFewPoints(_) | Error::Dimension { .. } => "validation",
        Error::Parse { .. } => "parse",
        Error::Singular(_) => "singular",
        Error::NonFinite { .. } => "non_finite",
        Error::NonLinearOracle => "nonlinear_oracle",
        Error::PlanMismatch(_) => "plan_mismatch",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

const OUTPUT_KEYS: &[&str] = &["out", "truth-out", "out-csv", "out-json", "out-dir"];

/// Flag/file/default resolution for one command.
struct Resolver {
    file: toml::Table,
    effective: BTreeMap<String, Value>,
}

trait FromToml: Sized {
    fn from_toml(v: &toml::Value) -> Option<Self>;
}

impl FromToml for f64 {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
    }
}

impl FromToml for u64 {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| u64::try_from(i).ok())
    }
}

impl FromToml for usize {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| usize::try_from(i).ok())
    }
}

impl FromToml for String {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        match v {
            toml::Value::String(s) => Some(s.clone()),
            toml::Value::Integer(i) => Some(i.to_string()),
            toml::Value::Float(f) => Some(f.to_string()),
            toml::Value::Array(items) => items
                .iter()
                .map(|i| String::from_toml(i))
                .collect::<Option<Vec<_>>>()
                .map(|v| v.join(",")),
            _ => None,
        }
    }
}

impl FromToml for bool {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_bool()
    }
}

impl FromToml for PathBuf {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_str().map(PathBuf::from)
    }
}

impl Resolver {
    fn new(path: Option<&Path>, allowed: &[&str]) -> std::result::Result<Self, Failure> {
        let file = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| {
                    Failure::Usage(format!("config file {}: {}", p.display(), e.message()))
                })?
            }
        };
        if let Some(k) = file.keys().find(|k| !allowed.contains(&k.as_str()) && k.as_str() != "jobs") {
            return Err(Failure::Usage(format!("unknown config key `{k}`")));
        }
        Ok(Resolver {
            file,
            effective: BTreeMap::new(),
        })
    }

    fn pick<T: FromToml + Serialize + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> std::result::Result<Option<T>, Failure> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                None => None,
                Some(raw) => Some(T::from_toml(raw).ok_or_else(|| {
                    Failure::Usage(format!("config key `{key}` has the wrong type"))
                })?),
            },
        };
        if let Some(v) = &value {
            self.effective
                .insert(key.to_string(), serde_json::to_value(v).expect("serializable"));
        }
        Ok(value)
    }

    fn or<T: FromToml + Serialize + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> std::result::Result<T, Failure> {
        let v = self.pick(key, flag)?.unwrap_or(default);
        self.effective
            .insert(key.to_string(), serde_json::to_value(&v).expect("serializable"));
        Ok(v)
    }

    fn seed(&mut self, flag: Option<u64>) -> std::result::Result<u64, Failure> {
        self.pick("seed", flag)?
            .ok_or_else(|| Failure::Usage("missing --seed: stochastic commands need an explicit seed".into()))
    }

    /// Hash of the resolved values; output locations are not part of it.
    fn hash(&self) -> String {
        let inputs: BTreeMap<&String, &Value> = self
            .effective
            .iter()
            .filter(|(k, _)| !OUTPUT_KEYS.contains(&k.as_str()))
            .collect();
        let json = serde_json::to_vec(&inputs).expect("serializable");
        hex(&Sha256::digest(json))
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            command: command.to_string(),
            config_hash: self.hash(),
            seed: self.effective.get("seed").and_then(Value::as_u64),
            config: self.effective.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Provenance {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    config: BTreeMap<String, Value>,
}

impl Provenance {
    fn comments(&self) -> Vec<String> {
        let mut c = vec![
            format!("command={}", self.command),
            format!("config_hash={}", self.config_hash),
        ];
        if let Some(s) = self.seed {
            c.push(format!("master_seed={s}"));
        }
        c
    }
}

/// `start:stop:step` or comma list.
pub fn parse_orders(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("cannot parse order list `{s}`"));
    if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if step == 0 || stop < start {
            return Err(bad());
        }
        Ok((start..=stop).step_by(step).collect())
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
    }
}

/// `lo:hi:n` (log-spaced) or comma list of reals.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid(format!("cannot parse grid `{s}`"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(bad());
        };
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        selection::log_grid(lo, hi, n)
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
    }
}

fn parse_model(name: &str) -> Result<bool> {
    match name {
        "gh" | "gauss-hermite" | "gausshermite" => Ok(false),
        "nonparametric" | "np" => Ok(true),
        other => Err(Error::invalid(format!(
            "unknown model `{other}` (expected gh or nonparametric)"
        ))),
    }
}

fn positive_nboot(n: usize) -> Result<usize> {
    if n == 0 {
        Err(Error::invalid("--nboot must be >= 1"))
    } else {
        Ok(n)
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Default α_S grid for the oracle: 10 log-spaced points over the scan range.
pub fn default_oracle_grid() -> Vec<f64> {
    selection::log_grid(1e4, 1e10, 10).expect("static grid")
}

type CmdResult = std::result::Result<Outcome, Failure>;

fn cmd_mockgen(a: MockgenArgs, cfg: Option<&Path>) -> CmdResult {
    let mut r = Resolver::new(cfg, &["snr", "seed", "n-data", "x-range-sigmas", "out", "truth-out", "noise-free"])?;
    let seed = r.seed(a.seed)?;
    let snr = r.or("snr", a.snr, 10.0)?;
    let mut mock_cfg = MockConfig::paper_default(snr, seed);
    mock_cfg.n_data = r.or("n-data", a.n_data, mock_cfg.n_data)?;
    mock_cfg.x_range_sigmas = r.or("x-range-sigmas", a.x_range_sigmas, mock_cfg.x_range_sigmas)?;
    let out = r.or("out", a.out, PathBuf::from("mock.csv"))?;
    let truth_out = r.or("truth-out", a.truth_out, PathBuf::from("truth.csv"))?;
    let noise_free = r.or("noise-free", a.noise_free.then_some(true), false)?;
    let prov = r.provenance("mockgen");
    let mock = data::generate_mock(&mock_cfg)?;
    let ds = if noise_free {
        mock.data.with_y(mock.truth.clone())?
    } else {
        mock.data
    };
    data::save_dataset_with_comments(&ds, &out, &prov.comments())?;
    data::save_truth(ds.x(), &mock.truth, &truth_out, &prov.comments())?;
    Ok(Outcome {
        report: json!({
            "data": out,
            "truth": truth_out,
            "n_data": ds.len(),
            "eps": ds.eps()[0],
            "provenance": prov,
        }),
        valid: true,
    })
}

fn model_spec(model: &str, order: Option<usize>, alpha: Option<f64>) -> Result<ModelSpec> {
    if parse_model(model)? {
        ModelSpec::nonparametric(alpha.unwrap_or(0.0))
    } else {
        let order = order.ok_or_else(|| Error::invalid("--order is required for the gh model"))?;
        if order % 2 != 0 {
            return Err(Error::invalid(format!(
                "Gauss-Hermite orders step by two (even orders only), got {order}"
            )));
        }
        let spec = ModelSpec::gauss_hermite(order)?;
        match alpha {
            Some(al) if al != 0.0 => Ok(ModelSpec { alpha: al, ..spec }).and_then(|s| {
                s.validate()?;
                Ok(s)
            }),
            _ => Ok(spec),
        }
    }
}

fn load_data(path: Option<PathBuf>) -> std::result::Result<(PathBuf, DataSet), Failure> {
    let path = path.ok_or_else(|| Failure::Usage("missing --data".into()))?;
    let ds = data::load_dataset(&path)?;
    Ok((path, ds))
}

fn cmd_fit(a: FitArgs, cfg: Option<&Path>) -> CmdResult {
    let mut r = Resolver::new(cfg, &["data", "model", "order", "alpha", "out"])?;
    let data_path = r.pick("data", a.data)?;
    let model = r.or("model", a.model, "gh".to_string())?;
    let order = r.pick("order", a.order)?;
    let alpha = r.pick("alpha", a.alpha)?;
    let out = r.pick("out", a.out)?;
    let spec = model_spec(&model, order, alpha)?;
    let (_, ds) = load_data(data_path)?;
    let prov = r.provenance("fit");
    let fit = solver::fit(&spec, &ds, &Init::Auto)?;
    let report = json!({"spec": spec, "fit": fit, "provenance": prov});
    if let Some(out) = out {
        write_file(&out, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))?;
    }
    Ok(Outcome {
        valid: fit.converged,
        report,
    })
}

fn data_or_mock(
    r: &mut Resolver,
    data: Option<PathBuf>,
    truth: Option<PathBuf>,
    snr: Option<f64>,
    default_snr: f64,
    seed: u64,
) -> std::result::Result<(DataSet, Option<Vec<f64>>), Failure> {
    let data = r.pick("data", data)?;
    let truth = r.pick("truth", truth)?;
    match data {
        Some(path) => {
            let ds = data::load_dataset(&path)?;
            let truth = match truth {
                Some(p) => {
                    let (x, y0) = data::load_truth(&p)?;
                    if x.len() != ds.len() || x.iter().zip(ds.x()).any(|(a, b)| a != b) {
                        return Err(Error::invalid("truth abscissae do not match the dataset").into());
                    }
                    Some(y0)
                }
                None => None,
            };
            Ok((ds, truth))
        }
        None => {
            let snr = r.or("snr", snr, default_snr)?;
            let mock = data::generate_mock(&MockConfig::paper_default(snr, seed))?;
            Ok((mock.data, Some(mock.truth)))
        }
    }
}

fn cmd_scan(a: ScanArgs, cfg: Option<&Path>) -> CmdResult {
    let mut r = Resolver::new(
        cfg,
        &["axis", "data", "truth", "snr", "seed", "nboot", "orders", "grid", "out-csv", "out-json"],
    )?;
    let seed = r.seed(a.seed)?;
    let axis = r.or("axis", a.axis, "order".to_string())?;
    let n_boot = positive_nboot(r.or("nboot", a.nboot, 100)?)?;
    let (ds, truth) = data_or_mock(&mut r, a.data, a.truth, a.snr, 100.0, seed)?;
    let plan = BootstrapPlan::new(n_boot, seed)?;
    let out_csv = r.or("out-csv", a.out_csv, PathBuf::from("scan.csv"))?;
    let out_json = r.or("out-json", a.out_json, PathBuf::from("scan.json"))?;
    let (table, axis_values) = match axis.as_str() {
        "order" => {
            let orders = parse_orders(&r.or("orders", a.orders, "4:30:2".to_string())?)?;
            selection::validate_orders(&orders)?;
            let prov_values: Vec<f64> = orders.iter().map(|&o| o as f64).collect();
            (selection::scan_parametric(&ds, &orders, &plan, truth.as_deref())?, prov_values)
        }
        "alpha" => {
            let grid = match r.pick("grid", a.grid)? {
                Some(g) => parse_grid(&g)?,
                None => selection::default_alpha_grid(),
            };
            (selection::scan_alpha(&ds, &grid, &plan, truth.as_deref())?, grid)
        }
        other => {
            return Err(Failure::Run(Error::invalid(format!(
                "unknown axis `{other}` (expected order or alpha)"
            ))))
        }
    };
    let prov = r.provenance("scan");
    write_file(&out_csv, &table.to_csv(&prov.comments()))?;
    let selected = table.selected_entry().map(|e| e.axis_value);
    let mirror = json!({
        "provenance": prov,
        "seed": seed,
        "n_boot": n_boot,
        "axis": table.axis,
        "grid": axis_values,
        "selected_axis_value": selected,
        "table": table,
    });
    write_file(&out_json, &(serde_json::to_string_pretty(&mirror).map_err(Error::from)? + "\n"))?;
    Ok(Outcome {
        report: json!({
            "axis": table.axis,
            "selected_axis_value": selected,
            "selected_alpha": (table.axis == ScanAxis::Log10Alpha)
                .then(|| selected.map(|v| 10f64.powf(v))).flatten(),
            "csv": out_csv,
            "json": out_json,
            "provenance": prov,
        }),
        valid: selected.is_some(),
    })
}

fn cmd_oracle(a: OracleArgs, cfg: Option<&Path>) -> CmdResult {
    let mut r = Resolver::new(cfg, &["model", "data", "snr", "seed", "nboot", "alpha", "out"])?;
    let model = r.or("model", a.model, "nonparametric".to_string())?;
    if !parse_model(&model)? {
        return Err(Error::NonLinearOracle.into());
    }
    let seed = r.seed(a.seed)?;
    let n_boot = positive_nboot(r.or("nboot", a.nboot, 500)?)?;
    let (ds, _) = data_or_mock(&mut r, a.data, None, a.snr, 10.0, seed)?;
    let grid = match r.pick("alpha", a.alpha)? {
        Some(g) => parse_grid(&g)?,
        None => default_oracle_grid(),
    };
    let out = r.or("out", a.out, PathBuf::from("oracle.csv"))?;
    let plan = BootstrapPlan::new(n_boot, seed)?;
    let spec = ModelSpec::nonparametric(0.0)?;
    let reports = oracle::validate_bootstrap(&spec, &ds, &plan, &grid)?;
    let prov = r.provenance("oracle");
    write_file(&out, &oracle::reports_to_csv(&reports, &prov.comments()))?;
    let valid = reports
        .iter()
        .all(|rep| rep.z_score.abs() <= 3.0 && rep.identity.as_ref().map_or(true, |i| i.holds));
    Ok(Outcome {
        report: json!({"csv": out, "reports": reports, "all_within_3_sigma": valid, "provenance": prov}),
        valid,
    })
}

fn cmd_figures(a: FiguresArgs, cfg: Option<&Path>) -> CmdResult {
    let mut r = Resolver::new(
        cfg,
        &[
            "seed",
            "out-dir",
            "n-mocks",
            "n-mocks-average",
            "nboot-meff",
            "nboot-scan",
            "nboot-ladder",
            "orders",
            "meff-orders",
            "grid",
        ],
    )?;
    let seed = r.seed(a.seed)?;
    let out_dir = r.or("out-dir", a.out_dir, PathBuf::from("figures"))?;
    let mut ec = ExperimentConfig::paper_default(seed, out_dir);
    ec.n_mocks = r.or("n-mocks", a.n_mocks, ec.n_mocks)?;
    ec.n_mocks_average = r.or("n-mocks-average", a.n_mocks_average, ec.n_mocks_average)?;
    ec.n_boot_meff = r.or("nboot-meff", a.nboot_meff, ec.n_boot_meff)?;
    ec.n_boot_scan = r.or("nboot-scan", a.nboot_scan, ec.n_boot_scan)?;
    if let Some(s) = r.pick("nboot-ladder", a.nboot_ladder)? {
        ec.n_boot_values = parse_orders(&s)?;
    }
    if let Some(s) = r.pick("orders", a.orders)? {
        ec.orders = parse_orders(&s)?;
    }
    if let Some(s) = r.pick("meff-orders", a.meff_orders)? {
        ec.meff_orders = parse_orders(&s)?;
    }
    if let Some(s) = r.pick("grid", a.grid)? {
        ec.alpha_grid = parse_grid(&s)?;
    }
    let manifest = experiments::run_figure_suite(&ec)?;
    Ok(Outcome {
        report: json!({
            "out_dir": ec.output_dir,
            "status": manifest.status,
            "config_hash": manifest.config_hash,
            "files": manifest.files.len(),
        }),
        valid: manifest.status == "complete",
    })
}

fn set_jobs(jobs: Option<usize>, file: Option<&Path>) -> std::result::Result<(), Failure> {
    let jobs = match jobs {
        Some(j) => Some(j),
        None => match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e: toml::de::Error| Failure::Usage(e.message().to_string()))?;
                table.get("jobs").and_then(usize::from_toml)
            }
            None => None,
        },
    };
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(())
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> CmdResult {
    let cfg = cli.config.as_deref();
    set_jobs(cli.jobs, cfg)?;
    match cli.command {
        Command::Mockgen(a) => cmd_mockgen(a, cfg),
        Command::Fit(a) => cmd_fit(a, cfg),
        Command::Scan(a) => cmd_scan(a, cfg),
        Command::Oracle(a) => cmd_oracle(a, cfg),
        Command::Figures(a) => cmd_figures(a, cfg),
    }
}

/// Parses `args`, runs, prints JSON and returns the exit code: 0 on success,
/// 1 on a runtime error, 2 on a usage error, 3 when outputs were written
/// but a validity check failed.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let f = Failure::Usage(e.to_string().trim().to_string());
            eprintln!("{}", f.to_json());
            return f.exit_code();
        }
    };
    match execute(cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.report).expect("serializable"));
            if out.valid {
                0
            } else {
                3
            }
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.exit_code()
        }
    }
}
