//! Datasets, the Gauss-Hermite generating model and mock generation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite;

/// Observed sample: abscissae, ordinates and per-point noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    x: Vec<f64>,
    y: Vec<f64>,
    eps: Vec<f64>,
}

impl DataSet {
    /// Validates and builds a dataset. `x` must be strictly increasing and
    /// every noise level positive.
    pub fn new(x: Vec<f64>, y: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::Dimension {
                what: "y",
                expected: n,
                got: y.len(),
            });
        }
        if eps.len() != n {
            return Err(Error::Dimension {
                what: "eps",
                expected: n,
                got: eps.len(),
            });
        }
        if n < 3 {
            return Err(Error::TooFewPoints(n));
        }
        if let Some(i) = eps.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(format!("non-positive noise at index {i}")));
        }
        if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!("x not strictly increasing at index {}", i + 1)));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value"));
        }
        Ok(DataSet { x, y, eps })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Same abscissae and noise, new ordinates.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::Dimension {
                what: "y",
                expected: self.len(),
                got: y.len(),
            });
        }
        Ok(DataSet {
            x: self.x.clone(),
            y,
            eps: self.eps.clone(),
        })
    }

    /// χ² of `values` against the ordinates.
    pub fn chi2(&self, values: &[f64]) -> f64 {
        self.y
            .iter()
            .zip(values)
            .zip(&self.eps)
            .map(|((y, f), e)| ((y - f) / e).powi(2))
            .sum()
    }

    /// True when the abscissae are evenly spaced to relative tolerance `1e-9`.
    pub fn is_uniform_grid(&self) -> bool {
        let step = (self.x[self.len() - 1] - self.x[0]) / (self.len() - 1) as f64;
        self.x
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs())
    }
}

/// Gauss-Hermite series used to generate mock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingModel {
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Coefficients `h_i` keyed by order `i >= 3`.
    pub h: BTreeMap<usize, f64>,
    pub n_gh_max: usize,
}

impl GeneratingModel {
    /// The toy model: `γ = 1, μ = 0, σ = 350`, orders up to 10.
    pub fn table1() -> Self {
        let h = [(3, 0.0), (4, 0.1), (5, 0.05), (6, 0.1), (7, -0.05), (8, 0.0), (9, 0.0), (10, 0.2)]
            .into_iter()
            .collect();
        GeneratingModel {
            gamma: 1.0,
            mu: 0.0,
            sigma: 350.0,
            h,
            n_gh_max: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if let Some(k) = self.h.keys().find(|&&k| k < 3 || k > self.n_gh_max) {
            return Err(Error::invalid(format!(
                "coefficient order {k} outside [3, {}]",
                self.n_gh_max
            )));
        }
        Ok(())
    }

    /// Parameter vector `(γ, μ, σ, h_3, …, h_n)` for order `n`.
    pub fn theta(&self, n_gh: usize) -> Vec<f64> {
        let mut theta = vec![self.gamma, self.mu, self.sigma];
        theta.extend((3..=n_gh).map(|k| self.h.get(&k).copied().unwrap_or(0.0)));
        theta
    }
}

/// Evaluates the generating profile at `x`.
///
/// The prefactor is `γ / sqrt(2πσ)`; the Hermite polynomials are orthonormal
/// (see [`crate::hermite`]).
pub fn eval_generating(model: &GeneratingModel, x: f64) -> f64 {
    let u = (x - model.mu) / model.sigma;
    let series: f64 = model
        .h
        .iter()
        .map(|(&order, &coef)| coef * hermite::eval(order, u))
        .sum();
    model.gamma / (2.0 * std::f64::consts::PI * model.sigma).sqrt()
        * (-0.5 * u * u).exp()
        * (1.0 + series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub generating: GeneratingModel,
    pub n_data: usize,
    /// Half-width of the grid in units of σ.
    pub x_range_sigmas: f64,
    pub snr_peak: f64,
    pub seed: u64,
}

impl MockConfig {
    /// 71 points over ±8σ of the toy model.
    pub fn paper_default(snr_peak: f64, seed: u64) -> Self {
        MockConfig {
            generating: GeneratingModel::table1(),
            n_data: 71,
            x_range_sigmas: 8.0,
            snr_peak,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generating.validate()?;
        if self.n_data < 3 {
            return Err(Error::TooFewPoints(self.n_data));
        }
        if !(self.snr_peak > 0.0 && self.snr_peak.is_finite()) {
            return Err(Error::invalid("snr_peak must be positive"));
        }
        if !(self.x_range_sigmas > 0.0 && self.x_range_sigmas.is_finite()) {
            return Err(Error::invalid("x_range_sigmas must be positive"));
        }
        Ok(())
    }
}

/// Noisy mock plus the noise-free truth at the same abscissae.
#[derive(Debug, Clone, PartialEq)]
pub struct Mock {
    pub data: DataSet,
    pub truth: Vec<f64>,
}

/// Draws a mock dataset. The noise is constant, equal to the largest truth
/// value on the grid divided by `snr_peak`, and drawn from a ChaCha8 stream
/// seeded with `cfg.seed` (stream 0).
pub fn generate_mock(cfg: &MockConfig) -> Result<Mock> {
    cfg.validate()?;
    let g = &cfg.generating;
    let lo = g.mu - cfg.x_range_sigmas * g.sigma;
    let hi = g.mu + cfg.x_range_sigmas * g.sigma;
    let step = (hi - lo) / (cfg.n_data - 1) as f64;
    let x: Vec<f64> = (0..cfg.n_data)
        .map(|i| if i + 1 == cfg.n_data { hi } else { lo + step * i as f64 })
        .collect();
    let truth: Vec<f64> = x.iter().map(|&xi| eval_generating(g, xi)).collect();
    let peak = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid("generating model has no positive peak on the grid"));
    }
    let noise = peak / cfg.snr_peak;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y = truth
        .iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(&mut rng);
            t + noise * z
        })
        .collect();
    let data = DataSet::new(x, y, vec![noise; cfg.n_data])?;
    Ok(Mock { data, truth })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses numeric CSV rows under a fixed header. Lines starting with `#` are
/// provenance comments and skipped. Row numbers in errors are 1-based file
/// line numbers.
fn parse_rows<const K: usize>(text: &str, header: &str) -> Result<Vec<(usize, [f64; K])>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == header => {}
        Some((row, h)) => {
            return Err(Error::Parse {
                row,
                msg: format!("expected header `{header}`, found `{h}`"),
            })
        }
        None => return Err(Error::TooFewPoints(0)),
    }
    lines
        .map(|(row, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != K {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {K} fields, found {}", fields.len()),
                });
            }
            let mut out = [0.0; K];
            for (slot, field) in out.iter_mut().zip(&fields) {
                *slot = field.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("malformed number `{field}`"),
                })?;
                if !slot.is_finite() {
                    return Err(Error::Parse {
                        row,
                        msg: format!("non-finite value `{field}`"),
                    });
                }
            }
            Ok((row, out))
        })
        .collect()
}

/// Parses the `x,y,eps` dataset format.
pub fn parse_dataset(text: &str) -> Result<DataSet> {
    let rows = parse_rows::<3>(text, "x,y,eps")?;
    if rows.len() < 3 {
        return Err(Error::TooFewPoints(rows.len()));
    }
    for (k, (row, [x, _, eps])) in rows.iter().enumerate() {
        if !(*eps > 0.0) {
            return Err(Error::Parse {
                row: *row,
                msg: "non-positive noise".into(),
            });
        }
        if k > 0 && !(*x > rows[k - 1].1[0]) {
            return Err(Error::Parse {
                row: *row,
                msg: "non-increasing x".into(),
            });
        }
    }
    let (x, y, eps) = rows.iter().map(|(_, r)| (r[0], r[1], r[2])).fold(
        (Vec::new(), Vec::new(), Vec::new()),
        |(mut x, mut y, mut e), (a, b, c)| {
            x.push(a);
            y.push(b);
            e.push(c);
            (x, y, e)
        },
    );
    DataSet::new(x, y, eps)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DataSet> {
    parse_dataset(&read_text(path.as_ref())?)
}

/// Renders the dataset as CSV. Numbers use the shortest representation that
/// round-trips exactly.
pub fn format_dataset(ds: &DataSet, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("x,y,eps\n");
    for i in 0..ds.len() {
        let _ = writeln!(out, "{:e},{:e},{:e}", ds.x[i], ds.y[i], ds.eps[i]);
    }
    out
}

pub fn save_dataset(ds: &DataSet, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_dataset(ds, &[]))
}

/// Writes with leading `# ` provenance comment lines.
pub fn save_dataset_with_comments(
    ds: &DataSet,
    path: impl AsRef<Path>,
    comments: &[String],
) -> Result<()> {
    write_text(path.as_ref(), &format_dataset(ds, comments))
}

pub fn save_truth(
    x: &[f64],
    truth: &[f64],
    path: impl AsRef<Path>,
    comments: &[String],
) -> Result<()> {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("x,y0\n");
    for (a, b) in x.iter().zip(truth) {
        let _ = writeln!(out, "{a:e},{b:e}");
    }
    write_text(path.as_ref(), &out)
}

/// Loads an `x,y0` truth file, returning `(x, y0)`.
pub fn load_truth(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = parse_rows::<2>(&read_text(path.as_ref())?, "x,y0")?;
    Ok(rows.into_iter().map(|(_, [x, y])| (x, y)).unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_gaussian_at_center() {
        let model = GeneratingModel {
            gamma: 1.0,
            mu: 0.0,
            sigma: 350.0,
            h: BTreeMap::new(),
            n_gh_max: 10,
        };
        // 1/sqrt(2π·350), 50-digit evaluation
        let want = 0.021_324_361_862_292_308;
        assert!((eval_generating(&model, 0.0) - want).abs() < 1e-16);
    }

    #[test]
    fn table1_regression_constants() {
        // 50-digit evaluation of the series with orthonormal Hermite polynomials
        let m = GeneratingModel::table1();
        let cases = [
            (0.0, 0.019_322_427_997_793_027),
            (350.0, 0.012_614_369_337_255_345),
            (-350.0, 0.013_528_527_222_953_251),
            (1000.0, 0.001_242_139_068_889_293_8),
            (-2800.0, 6.732_717_723_410_76e-10),
        ];
        for (x, want) in cases {
            let got = eval_generating(&m, x);
            assert!((got - want).abs() <= 1e-13 * want.abs(), "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn even_orders_are_symmetric() {
        let mut m = GeneratingModel::table1();
        m.h.retain(|k, _| k % 2 == 0);
        let d = m.sigma;
        let (l, r) = (eval_generating(&m, m.mu - d), eval_generating(&m, m.mu + d));
        assert!((l - r).abs() < 1e-17);
    }

    #[test]
    fn fig1_grid_layout() {
        let mock = generate_mock(&MockConfig::paper_default(10.0, 1)).unwrap();
        let ds = &mock.data;
        assert_eq!(ds.len(), 71);
        assert_eq!(ds.x()[0], -2800.0);
        assert_eq!(ds.x()[70], 2800.0);
        assert_eq!(ds.x()[35], 0.0);
        assert!(ds.is_uniform_grid());
        let e0 = ds.eps()[0];
        assert!(ds.eps().iter().all(|&e| e == e0));
        // 50-digit peak on the grid is at x = 160
        assert!((e0 - 0.021_806_795_476_746_779 / 10.0).abs() < 1e-16);
    }

    #[test]
    fn zero_noise_limit() {
        // the noise level is 1e-12 of the peak, so agreement is at that scale
        let mock = generate_mock(&MockConfig::paper_default(1e12, 9)).unwrap();
        let peak = mock.truth.iter().copied().fold(0.0, f64::max);
        for (y, t) in mock.data.y().iter().zip(&mock.truth) {
            assert!((y - t).abs() <= 6e-12 * peak, "{y} vs {t}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = MockConfig::paper_default(10.0, 42);
        assert_eq!(generate_mock(&cfg).unwrap(), generate_mock(&cfg).unwrap());
        let other = MockConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate_mock(&cfg).unwrap().data, generate_mock(&other).unwrap().data);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = MockConfig::paper_default(10.0, 1);
        cfg.n_data = 2;
        assert!(matches!(generate_mock(&cfg), Err(Error::TooFewPoints(2))));
        let cfg = MockConfig::paper_default(0.0, 1);
        assert!(generate_mock(&cfg).is_err());
    }

    #[test]
    fn parse_errors_name_the_row() {
        let text = "x,y,eps\n0,1,0.1\n1,2,0\n2,3,0.1\n";
        let err = parse_dataset(text).unwrap_err();
        assert_eq!(err.to_string(), "non-positive noise at row 3");

        let err = parse_dataset("x,y,eps\n0,1,1\n1,1,1\n").unwrap_err();
        assert_eq!(err.to_string(), "need at least 3 points, got 2");

        let err = parse_dataset("x,y,eps\n0,1,1\n2,1,1\n1,1,1\n").unwrap_err();
        assert_eq!(err.to_string(), "non-increasing x at row 4");

        let err = parse_dataset("x,y,eps\n0,1,1\n1,abc,1\n2,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }));

        let err = parse_dataset("x,y,eps\n0,1\n1,1,1\n2,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
    }

    #[test]
    fn comments_are_skipped() {
        let text = "# seed=1\n# hash=abc\nx,y,eps\n0,1,1\n1,2,1\n2,3,1\n";
        assert_eq!(parse_dataset(text).unwrap().len(), 3);
    }
}
