//! `drsentinel` command line: validate a config, or run the experiment it
//! describes and write JSON/CSV results.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::ambiguity::{MomentAmbiguitySet, NoiseSampler};
use crate::attack::DirectionStrategy;
use crate::detector::{steady_state_distances, tune_chi_squared, tune_dr, FalseAlarmEstimate, MonteCarloPlan, Tuning};
use crate::error::Error;
use crate::matcore::{sym_eig, Matrix, SymMatrix};
use crate::reachset::{
    certificate_violation, default_grid, min_trace_ellipsoid, noise_truncation, reachable_cloud, trace_tradeoff_sweep,
    CloudSpec, GridPoint, LmiOptions, TradeoffRow,
};
use crate::sdp::SdpOptions;
use crate::system::{joint_system, solve_dare};

use config::{defaults, ConfigError, DirectionKind, ExperimentKind, Validated};
use output::{write_csv, write_json, Cell, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "drsentinel", version, about = "Robust detector tuning and stealthy-attack reachable sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's `output`, then `results`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, env = "DRSENTINEL_THREADS")]
        threads: Option<usize>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(Error::InvalidInput(_)) => 2,
            CliError::Core(Error::AllInfeasible) => 3,
            CliError::Core(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Validate { config } => {
            let v = config::load(config).map_err(CliError::Config)?;
            Ok(format!(
                "ok: {} experiment, n={} m={} p={}",
                v.config.experiment.kind.label(),
                v.system.n(),
                v.system.m(),
                v.system.p()
            ))
        }
        Command::Run { config, out, threads } => {
            let v = config::load(config).map_err(CliError::Config)?;
            if let Some(t) = threads {
                // a second call in the same process keeps the first pool
                let _ = rayon::ThreadPoolBuilder::new().num_threads(*t).build_global();
            }
            let dir = out
                .clone()
                .or_else(|| v.config.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results"));
            std::fs::create_dir_all(&dir)?;
            run(&v, &dir)?;
            Ok(format!(
                "{} results written to {}",
                v.config.experiment.kind.label(),
                dir.display()
            ))
        }
    }
}

#[derive(Serialize)]
struct SystemSummary {
    n: usize,
    m: usize,
    p: usize,
    kalman_gain: bool,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    #[serde(rename = "L_kalman")]
    l_kalman: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p_err: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_r")]
    sigma_r: Vec<Vec<f64>>,
    closed_loop_radius: f64,
    observer_radius: f64,
}

#[derive(Serialize)]
struct Document<T: Serialize> {
    schema_version: u32,
    experiment: &'static str,
    seed: u64,
    system: SystemSummary,
    result: T,
}

/// Runs a validated experiment, writing `result.json` and its CSVs to `dir`.
pub fn run(v: &Validated, dir: &Path) -> Result<(), CliError> {
    let sys = &v.system;
    let dare = solve_dare(&sys.a, &sys.c, &sys.sigma_w, &sys.sigma_v)?;
    let summary = SystemSummary {
        n: sys.n(),
        m: sys.m(),
        p: sys.p(),
        kalman_gain: v.kalman_gain,
        l: sys.l.to_rows(),
        l_kalman: dare.l.to_rows(),
        p_err: v.residual.p.to_rows(),
        sigma_r: v.residual.sigma_r.to_rows(),
        closed_loop_radius: sys.closed_loop_radius(),
        observer_radius: sys.observer_radius(),
    };
    let e = &v.config.experiment;
    let doc = |result: serde_json::Value| Document {
        schema_version: SCHEMA_VERSION,
        experiment: e.kind.label(),
        seed: e.seed,
        system: summary,
        result,
    };
    let result = match e.kind {
        ExperimentKind::Tune => to_value(&run_tune(v)?),
        ExperimentKind::FalseAlarm => to_value(&run_false_alarm(v, dir)?),
        ExperimentKind::ReachSet => to_value(&run_reach_set(v, dir)?),
        ExperimentKind::TradeoffSweep => to_value(&run_sweep(v, dir)?),
        ExperimentKind::WorstCaseCurve => to_value(&run_worst_case(v, dir)?),
    };
    write_json(&dir.join("result.json"), &doc(result))?;
    Ok(())
}

fn to_value<T: Serialize>(result: &T) -> serde_json::Value {
    serde_json::to_value(result).expect("result types serialize to JSON")
}

#[derive(Serialize)]
struct TuneResult {
    target_rate: f64,
    alpha_chi2: f64,
    alpha_dr: f64,
    alpha_selected: f64,
    tuning: Tuning,
    w_bar: f64,
    /// Worst case over the ambiguity set of the chi-squared-tuned detector.
    chi2_worst_case_rate: f64,
    dr_worst_case_rate: f64,
}

fn run_tune(v: &Validated) -> Result<TuneResult, CliError> {
    let d = &v.config.detector;
    let p = v.system.p();
    let alpha_chi2 = tune_chi_squared(p, d.target_rate)?;
    let alpha_dr = tune_dr(p, d.target_rate)?;
    Ok(TuneResult {
        target_rate: d.target_rate,
        alpha_chi2,
        alpha_dr,
        alpha_selected: d.tuning.threshold(p, d.target_rate)?,
        tuning: d.tuning,
        w_bar: noise_truncation(v.system.n(), d.target_rate)?,
        chi2_worst_case_rate: (p as f64 / alpha_chi2).min(1.0),
        dr_worst_case_rate: d.target_rate,
    })
}

#[derive(Serialize)]
struct RateAt {
    alpha: f64,
    rate: f64,
    alarms: usize,
    ci95_halfwidth: f64,
}

#[derive(Serialize)]
struct FalseAlarmResult {
    tuning: Tuning,
    target_rate: f64,
    noise: String,
    ambiguity_member: bool,
    trials: usize,
    horizon: usize,
    burn_in: usize,
    samples: usize,
    alpha: f64,
    rate: f64,
    alarms: usize,
    ci95_halfwidth: f64,
    mean_distance: f64,
    chi_squared: RateAt,
    distributionally_robust: RateAt,
    histogram_bins: usize,
}

fn samplers(v: &Validated) -> Result<(NoiseSampler, NoiseSampler), CliError> {
    let make = |cov: &SymMatrix| -> Result<NoiseSampler, Error> {
        NoiseSampler::new(v.noise, MomentAmbiguitySet::new(cov.clone())?)
    };
    Ok((make(&v.system.sigma_w)?, make(&v.system.sigma_v)?))
}

fn run_false_alarm(v: &Validated, dir: &Path) -> Result<FalseAlarmResult, CliError> {
    let d = &v.config.detector;
    let e = &v.config.experiment;
    let p = v.system.p();
    let (sw, sv) = samplers(v)?;
    let mut plan = MonteCarloPlan::new(
        e.trials.unwrap_or(defaults::FA_TRIALS),
        e.horizon.unwrap_or(defaults::FA_HORIZON),
        e.seed,
    );
    if let Some(b) = e.burn_in {
        plan.burn_in = b;
    }
    let z = steady_state_distances(&v.system, &v.residual, &sv, &sw, &plan)?;
    let at = |alpha: f64| {
        let est = FalseAlarmEstimate::from_samples(&z, alpha);
        RateAt {
            alpha,
            rate: est.rate,
            alarms: est.alarms,
            ci95_halfwidth: est.ci95_halfwidth,
        }
    };
    let chi = at(tune_chi_squared(p, d.target_rate)?);
    let dr = at(tune_dr(p, d.target_rate)?);
    let selected = match d.tuning {
        Tuning::ChiSquared => &chi,
        Tuning::DistributionallyRobust => &dr,
    };

    let bins = e.histogram_bins.unwrap_or(defaults::HISTOGRAM_BINS);
    let upper = z.iter().cloned().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let width = upper / bins as f64;
    let mut counts = vec![0u64; bins];
    for &value in &z {
        let k = ((value / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    write_csv(
        &dir.join("histogram.csv"),
        &["bin_lo", "bin_hi", "count"],
        counts.iter().enumerate().map(|(k, &c)| {
            vec![
                Cell::Float(k as f64 * width),
                Cell::Float(if k + 1 == bins { upper } else { (k + 1) as f64 * width }),
                Cell::Int(c),
            ]
        }),
    )?;

    Ok(FalseAlarmResult {
        tuning: d.tuning,
        target_rate: d.target_rate,
        noise: format!("{:?}", v.noise),
        ambiguity_member: sw.is_ambiguity_member() && sv.is_ambiguity_member(),
        trials: plan.trials,
        horizon: plan.horizon,
        burn_in: plan.burn_in,
        samples: z.len(),
        alpha: selected.alpha,
        rate: selected.rate,
        alarms: selected.alarms,
        ci95_halfwidth: selected.ci95_halfwidth,
        mean_distance: z.iter().sum::<f64>() / z.len() as f64,
        histogram_bins: bins,
        chi_squared: chi,
        distributionally_robust: dr,
    })
}

#[derive(Serialize)]
struct CloudSummary {
    trajectories: usize,
    horizon: usize,
    direction: &'static str,
    points_checked: usize,
    points_written: usize,
    max_margin: f64,
    all_contained: bool,
}

#[derive(Serialize)]
struct ReachSetOutput {
    tuning: Tuning,
    target_rate: f64,
    alpha: f64,
    w_bar: f64,
    a: f64,
    a1: f64,
    a2: f64,
    trace_qx: f64,
    #[serde(rename = "Q_x")]
    q_x: Vec<Vec<f64>>,
    #[serde(rename = "Q_xi")]
    q_xi: Vec<Vec<f64>>,
    joint_spectral_radius: f64,
    certificate_samples: usize,
    certificate_max_violation: f64,
    cloud: CloudSummary,
    grid: Vec<GridPoint>,
}

fn run_reach_set(v: &Validated, dir: &Path) -> Result<ReachSetOutput, CliError> {
    let d = &v.config.detector;
    let e = &v.config.experiment;
    let sys = &v.system;
    let alpha = d.tuning.threshold(sys.p(), d.target_rate)?;
    let w_bar = noise_truncation(sys.n(), d.target_rate)?;
    let joint = joint_system(sys, &v.residual)?;
    let grid = e.a_grid.clone().unwrap_or_else(default_grid);
    let res = min_trace_ellipsoid(
        &joint,
        &sys.sigma_w,
        alpha,
        w_bar,
        &grid,
        &SdpOptions::default(),
        &LmiOptions::default(),
    )?;
    let cert_samples = e.certificate_samples.unwrap_or(defaults::CERTIFICATE_SAMPLES);
    let violation = certificate_violation(&res, &joint, &sys.sigma_w, cert_samples, e.seed)?;

    let (direction, label) = match e.direction {
        DirectionKind::Greedy => (
            DirectionStrategy::GreedyAligned {
                joint: joint.clone(),
                hint: Some(res.joint_ellipsoid()?),
            },
            "greedy",
        ),
        DirectionKind::Uniform => (DirectionStrategy::UniformSphere, "uniform"),
    };
    let spec = CloudSpec {
        alpha,
        w_bar,
        trajectories: e.trials.unwrap_or(defaults::CLOUD_TRIALS),
        horizon: e.horizon.unwrap_or(defaults::CLOUD_HORIZON),
        seed: e.seed,
        direction,
    };
    let stride = e.cloud_stride.unwrap_or(1);
    let q_x = &res.q_x;
    let per_traj = reachable_cloud(sys, &v.residual, &spec, |trace| {
        let mut worst = 0.0_f64;
        let mut kept = Vec::new();
        for (t, x) in trace.x.iter().enumerate().skip(1) {
            worst = worst.max(q_x.inverse_shape().quad_form(x));
            if (t - 1) % stride == 0 {
                kept.push(x.clone());
            }
        }
        (worst, kept)
    })?;
    let max_margin = per_traj.iter().map(|(m, _)| *m).fold(0.0, f64::max);
    let points: Vec<&Vec<f64>> = per_traj.iter().flat_map(|(_, pts)| pts).collect();
    let n = sys.n();
    let header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join("cloud.csv"),
        &header_refs,
        points.iter().map(|x| x.iter().map(|&v| Cell::Float(v)).collect()),
    )?;
    write_ellipsoid(&dir.join("ellipsoid.csv"), &res.q_x)?;

    Ok(ReachSetOutput {
        tuning: d.tuning,
        target_rate: d.target_rate,
        alpha,
        w_bar,
        a: res.a,
        a1: res.a1,
        a2: res.a2,
        trace_qx: res.trace_qx,
        q_x: res.q_x.shape().to_rows(),
        q_xi: res.q_xi.to_rows(),
        joint_spectral_radius: joint.spectral_radius(),
        certificate_samples: cert_samples,
        certificate_max_violation: violation,
        cloud: CloudSummary {
            trajectories: spec.trajectories,
            horizon: spec.horizon,
            direction: label,
            points_checked: spec.trajectories * spec.horizon,
            points_written: points.len(),
            max_margin,
            all_contained: max_margin <= 1.0 + crate::reachset::CONTAINMENT_TOL,
        },
        grid: res.grid,
    })
}

/// 64-point boundary polyline for planar ellipsoids, principal axes otherwise.
fn write_ellipsoid(path: &Path, e: &crate::reachset::Ellipsoid) -> Result<(), CliError> {
    if e.dim() == 2 {
        let pts = e.boundary_2d(64)?;
        write_csv(
            path,
            &["x1", "x2"],
            pts.iter().map(|p| vec![Cell::Float(p[0]), Cell::Float(p[1])]),
        )?;
        return Ok(());
    }
    let eig = sym_eig(e.shape())?;
    let n = e.dim();
    let mut header = vec!["axis".to_string(), "semi_axis".to_string()];
    header.extend((1..=n).map(|i| format!("v{i}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let vectors: &Matrix = &eig.vectors;
    write_csv(
        path,
        &header_refs,
        (0..n).map(|k| {
            let mut row = vec![Cell::Int(k as u64), Cell::Float(eig.values[k].max(0.0).sqrt())];
            row.extend(vectors.col(k).into_iter().map(Cell::Float));
            row
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SweepOutput {
    rows: Vec<TradeoffRow>,
}

fn run_sweep(v: &Validated, dir: &Path) -> Result<SweepOutput, CliError> {
    let e = &v.config.experiment;
    let rates = e.rates.clone().unwrap_or_else(|| defaults::SWEEP_RATES.to_vec());
    let grid = e.a_grid.clone().unwrap_or_else(default_grid);
    let rows = trace_tradeoff_sweep(
        &v.system,
        &v.residual,
        &rates,
        &grid,
        &SdpOptions::default(),
        &LmiOptions::default(),
    )?;
    write_csv(
        &dir.join("sweep.csv"),
        &["target_rate", "alpha", "w_bar", "trace_qx", "a"],
        rows.iter().map(|r| {
            vec![
                Cell::Float(r.target_rate),
                Cell::Float(r.alpha_dr),
                Cell::Float(r.w_bar),
                Cell::Float(r.trace_qx),
                Cell::Float(r.a),
            ]
        }),
    )?;
    Ok(SweepOutput { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstCaseRow {
    pub desired: f64,
    pub alpha_chi2: f64,
    pub chi2_worst: f64,
    pub alpha_dr: f64,
    pub dr_worst: f64,
}

/// Worst-case false-alarm rate over the ambiguity set for both tunings. The
/// Chebyshev bound `p/α` is attained, so the chi-squared column is
/// `min(1, p/α_χ²)` and the robust column is the design rate itself.
pub fn worst_case_curve(p: usize, rates: &[f64]) -> Result<Vec<WorstCaseRow>, Error> {
    rates
        .iter()
        .map(|&rate| {
            let alpha_chi2 = if rate >= 1.0 { 0.0 } else { tune_chi_squared(p, rate)? };
            let alpha_dr = tune_dr(p, rate)?;
            let chi2_worst = if alpha_chi2 > 0.0 { (p as f64 / alpha_chi2).min(1.0) } else { 1.0 };
            Ok(WorstCaseRow {
                desired: rate,
                alpha_chi2,
                chi2_worst,
                alpha_dr,
                dr_worst: rate,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CurveOutput {
    p: usize,
    rows: Vec<WorstCaseRow>,
}

fn run_worst_case(v: &Validated, dir: &Path) -> Result<CurveOutput, CliError> {
    let rates = v.config.experiment.rates.clone().unwrap_or_else(defaults::curve_rates);
    let p = v.system.p();
    let rows = worst_case_curve(p, &rates)?;
    write_csv(
        &dir.join("worst_case.csv"),
        &["desired", "chi2_worst", "dr_worst", "alpha_chi2", "alpha_dr"],
        rows.iter().map(|r| {
            vec![
                Cell::Float(r.desired),
                Cell::Float(r.chi2_worst),
                Cell::Float(r.dr_worst),
                Cell::Float(r.alpha_chi2),
                Cell::Float(r.alpha_dr),
            ]
        }),
    )?;
    Ok(CurveOutput { p, rows })
}
