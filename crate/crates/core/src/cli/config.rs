//! Experiment configuration: JSON schema, parsing and validation.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::ambiguity::NoiseFamily;
use crate::detector::Tuning;
use crate::matcore::{Matrix, SymMatrix};
use crate::system::{residual_model, LtiSystem, ResidualModel};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemBlock,
    pub detector: DetectorBlock,
    pub experiment: ExperimentBlock,
    /// Output directory, overridden by `--out`.
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    /// Observer gain; the steady-state Kalman gain when absent.
    #[serde(rename = "L", default)]
    pub l: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_w")]
    pub sigma_w: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_v")]
    pub sigma_v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    StudentT,
    GaussianScaleMixture,
    ChebyshevExtremal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    pub tuning: Tuning,
    pub target_rate: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub mixture_weight: Option<f64>,
    #[serde(default)]
    pub mixture_scale: Option<f64>,
    #[serde(default)]
    pub extremal_level: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Tune,
    FalseAlarm,
    ReachSet,
    TradeoffSweep,
    WorstCaseCurve,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Tune => "tune",
            ExperimentKind::FalseAlarm => "false-alarm",
            ExperimentKind::ReachSet => "reach-set",
            ExperimentKind::TradeoffSweep => "tradeoff-sweep",
            ExperimentKind::WorstCaseCurve => "worst-case-curve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    #[default]
    Greedy,
    Uniform,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub a_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    #[serde(default)]
    pub histogram_bins: Option<usize>,
    #[serde(default)]
    pub direction: DirectionKind,
    #[serde(default)]
    pub cloud_stride: Option<usize>,
    #[serde(default)]
    pub certificate_samples: Option<usize>,
}

/// Validation failure pointing into the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": ")?;
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Fully checked experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: ExperimentConfig,
    pub system: LtiSystem,
    pub residual: ResidualModel,
    /// `true` when `L` came from the Riccati equation rather than the file.
    pub kalman_gain: bool,
    pub noise: NoiseFamily,
}

pub fn load(path: &Path) -> Result<Validated, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: display.clone(),
        line: None,
        column: None,
        field: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse(&display, &text)
}

pub fn parse(path: &str, text: &str) -> Result<Validated, ConfigError> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError {
        path: path.to_string(),
        line: Some(e.line()),
        column: Some(e.column()),
        field: None,
        message: e.to_string(),
    })?;
    let fail = |section: &str, key: &str, message: String| {
        let (line, column) = locate_key(text, section, key);
        ConfigError {
            path: path.to_string(),
            line,
            column,
            field: Some(if key.is_empty() {
                section.to_string()
            } else {
                format!("{section}.{key}")
            }),
            message,
        }
    };

    let s = &config.system;
    let mat = |key: &str, rows: &[Vec<f64>]| matrix(rows).map_err(|m| fail("system", key, m));
    let sym = |key: &str, rows: &[Vec<f64>]| {
        let m = matrix(rows).map_err(|m| fail("system", key, m))?;
        SymMatrix::new(m).map_err(|e| fail("system", key, e.to_string()))
    };
    let a = mat("A", &s.a)?;
    let b = mat("B", &s.b)?;
    let c = mat("C", &s.c)?;
    let k = mat("K", &s.k)?;
    let l = s.l.as_deref().map(|rows| mat("L", rows)).transpose()?;
    let sigma_w = sym("Sigma_w", &s.sigma_w)?;
    let sigma_v = sym("Sigma_v", &s.sigma_v)?;

    let (n, m, p) = (a.rows(), b.cols(), c.rows());
    let shapes: [(&str, &Matrix, usize, usize); 6] = [
        ("A", &a, n, n),
        ("B", &b, n, m),
        ("C", &c, p, n),
        ("K", &k, m, n),
        ("Sigma_w", &sigma_w, n, n),
        ("Sigma_v", &sigma_v, p, p),
    ];
    for (key, mtx, rows, cols) in shapes {
        if (mtx.rows(), mtx.cols()) != (rows, cols) {
            return Err(fail(
                "system",
                key,
                format!("expected {rows}x{cols}, got {}x{}", mtx.rows(), mtx.cols()),
            ));
        }
    }
    if let Some(l) = &l {
        if (l.rows(), l.cols()) != (n, p) {
            return Err(fail("system", "L", format!("expected {n}x{p}, got {}x{}", l.rows(), l.cols())));
        }
    }
    let kalman_gain = l.is_none();
    let system = match l {
        Some(l) => LtiSystem::new(a, b, c, k, l, sigma_w, sigma_v),
        None => LtiSystem::with_kalman_gain(a, b, c, k, sigma_w, sigma_v),
    }
    .map_err(|e| fail("system", "", e.to_string()))?;
    system.check_stability().map_err(|e| fail("system", "", e.to_string()))?;
    let residual = residual_model(&system).map_err(|e| fail("system", "", e.to_string()))?;

    let d = &config.detector;
    let rate_ok = d.target_rate > 0.0 && d.target_rate < 1.0;
    if !rate_ok {
        return Err(fail(
            "detector",
            "target_rate",
            format!("must be in (0, 1), got {}", d.target_rate),
        ));
    }
    let need = |key: &str, v: Option<f64>| v.ok_or_else(|| fail("detector", key, "required for this noise family".into()));
    let noise = match d.noise {
        NoiseKind::Gaussian => NoiseFamily::Gaussian,
        NoiseKind::StudentT => NoiseFamily::StudentT { nu: need("nu", d.nu)? },
        NoiseKind::GaussianScaleMixture => NoiseFamily::GaussianScaleMixture {
            heavy_weight: need("mixture_weight", d.mixture_weight)?,
            heavy_scale: need("mixture_scale", d.mixture_scale)?,
        },
        NoiseKind::ChebyshevExtremal => NoiseFamily::ChebyshevExtremal {
            level: need("extremal_level", d.extremal_level)?,
        },
    };
    // constructing a sampler runs the family's parameter checks
    for cov in [&system.sigma_w, &system.sigma_v] {
        crate::ambiguity::NoiseSampler::new(
            noise,
            crate::ambiguity::MomentAmbiguitySet::new(cov.clone()).map_err(|e| fail("system", "", e.to_string()))?,
        )
        .map_err(|e| fail("detector", "noise", e.to_string()))?;
    }

    let e = &config.experiment;
    let positive = |key: &str, v: Option<usize>| match v {
        Some(0) => Err(fail("experiment", key, "must be positive".into())),
        _ => Ok(()),
    };
    positive("trials", e.trials)?;
    positive("horizon", e.horizon)?;
    positive("histogram_bins", e.histogram_bins)?;
    positive("cloud_stride", e.cloud_stride)?;
    positive("certificate_samples", e.certificate_samples)?;
    if let Some(grid) = &e.a_grid {
        if grid.is_empty() || grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(fail("experiment", "a_grid", "needs at least one value, all in (0, 1)".into()));
        }
    }
    if let Some(rates) = &e.rates {
        let upper_ok = |r: f64| match e.kind {
            ExperimentKind::WorstCaseCurve => r <= 1.0,
            _ => r < 1.0,
        };
        if rates.is_empty() || rates.iter().any(|&r| !(r > 0.0 && upper_ok(r))) {
            return Err(fail("experiment", "rates", "needs at least one value, all in (0, 1)".into()));
        }
    }
    if e.kind == ExperimentKind::FalseAlarm {
        let trials = e.trials.unwrap_or(defaults::FA_TRIALS);
        let horizon = e.horizon.unwrap_or(defaults::FA_HORIZON);
        if trials * horizon < 10_000 {
            return Err(fail(
                "experiment",
                "trials",
                format!("trials * horizon must be at least 10000, got {}", trials * horizon),
            ));
        }
    }

    Ok(Validated {
        config,
        system,
        residual,
        kalman_gain,
        noise,
    })
}

pub mod defaults {
    pub const FA_TRIALS: usize = 100;
    pub const FA_HORIZON: usize = 1000;
    pub const CLOUD_TRIALS: usize = 1000;
    pub const CLOUD_HORIZON: usize = 200;
    pub const HISTOGRAM_BINS: usize = 60;
    pub const CERTIFICATE_SAMPLES: usize = 100_000;
    pub const SWEEP_RATES: [f64; 5] = [0.02, 0.05, 0.1, 0.2, 0.4];

    pub fn curve_rates() -> Vec<f64> {
        (1..=50).map(|k| k as f64 / 100.0).collect()
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix, String> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err("matrix must have at least one row and one column".into());
    }
    let cols = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!("row {i} has {} entries, row 0 has {cols}", rows[i].len()));
    }
    let m = Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    if !m.as_slice().iter().all(|v| v.is_finite()) {
        return Err("entries must be finite".into());
    }
    Ok(m)
}

/// 1-based line/column of `"key"` inside the `"section"` object, falling back
/// to the section itself.
fn locate_key(text: &str, section: &str, key: &str) -> (Option<usize>, Option<usize>) {
    let Some(sec) = text.find(&format!("\"{section}\"")) else {
        return (None, None);
    };
    let offset = if key.is_empty() {
        Some(sec)
    } else {
        text[sec..].find(&format!("\"{key}\"")).map(|o| sec + o)
    };
    let at = offset.unwrap_or(sec);
    let before = &text[..at];
    let line = before.matches('\n').count() + 1;
    let column = at - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (Some(line), Some(column))
}
