use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gqnet_core::par::with_jobs;
use gqnet_core::simulation::Summary;
use gqnet_core::solver::GroupKkt;
use gqnet_core::tuning::{default_gamma, sample_sd};
use gqnet_core::{
    active_set, adaptive_weights, aggregate, compute_sn, default_grid, estimate_tau, fit_enet, fit_pilot,
    grid_search, kkt_check, objective_penalized, objective_quantile, run_scenario, FitResult, KktReport,
    PenaltyConfig, PilotOptions, ReplicationMetrics, SolverOptions, SweepMode, TuningGrid, ZERO_TOL,
};
use log::{info, warn};

use crate::coef::{read_coefficients, CoefficientFile};
use crate::dataset::{read_dataset, Dataset};
use crate::error::{write_string, CliError, Result};
use crate::grid::read_grid;
use crate::number::{self, fmt};
use crate::scenario::{read_scenario, render_scenario};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_VAR: &str = "GQNET_SEED";

/// Adaptive elastic-net group quantile regression.
///
/// Exit codes: 0 success, 1 input error, 2 solver did not converge
/// (results are still written), 3 KKT check failed.
#[derive(Debug, Parser)]
#[command(name = "gqnet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one (lambda1, lambda2) pair and write the coefficients.
    Fit(FitArgs),
    /// Search a (lambda1, lambda2) grid with the BIC-type criterion.
    Tune(TuneArgs),
    /// Run a seeded Monte Carlo campaign from a scenario file.
    Simulate(SimulateArgs),
    /// Check the optimality conditions of a coefficient file.
    Kkt(KktArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto {
    Auto,
    Value(f64),
}

fn parse_auto(s: &str) -> std::result::Result<Auto, String> {
    if s == "auto" {
        return Ok(Auto::Auto);
    }
    number::parse(s)
        .filter(|v| v.is_finite())
        .map(Auto::Value)
        .ok_or_else(|| format!("expected `auto` or a number, got `{s}`"))
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Stop once the step norm falls below this value.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Iteration cap; reaching it reports non-convergence.
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    /// Within-sweep update order: jacobi or gauss-seidel.
    #[arg(long, default_value = "jacobi")]
    pub sweep: SweepMode,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::Input("--epsilon must be positive".into()));
        }
        Ok(SolverOptions {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            sweep_mode: self.sweep,
        })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Delimited text file: response in the first column, predictors after.
    pub dataset: PathBuf,
    /// Quantile index, or `auto` to estimate it from the response.
    #[arg(long, default_value = "0.5", value_parser = parse_auto)]
    pub tau: Auto,
    #[arg(long)]
    pub lambda1: f64,
    /// Must be positive.
    #[arg(long)]
    pub lambda2: f64,
    /// Adaptive-weight exponent; defaults to the rule used by `tune`.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Scaled tolerance of the KKT check recorded in the output.
    #[arg(long, default_value_t = 1e-2)]
    pub kkt_tol: f64,
    /// Coefficient file to write; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    pub dataset: PathBuf,
    /// `auto` for the default lambda families, or a grid file with
    /// `lambda1 = ...` and `lambda2 = ...` lines.
    #[arg(long, default_value = "auto")]
    pub grid: String,
    /// Complexity multiplier of the criterion, or `auto` for max(1, g / ln n).
    #[arg(long, default_value = "auto", value_parser = parse_auto)]
    pub sn: Auto,
    #[arg(long, default_value = "0.5", value_parser = parse_auto)]
    pub tau: Auto,
    /// Overrides the default gamma.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Scale entering the default lambda families; the sample standard
    /// deviation of the response when absent.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 1e-2)]
    pub kkt_tol: f64,
    /// Worker threads for grid cells.
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Criterion table; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coefficient file of the winning cell.
    #[arg(long)]
    pub best_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file of `key = value` lines.
    pub scenario: PathBuf,
    /// Overrides the scenario's replication count.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KktArgs {
    pub dataset: PathBuf,
    /// Coefficient file as written by `fit` or `tune`.
    pub coefficients: PathBuf,
    /// Defaults to the value stored in the coefficient file.
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Scaled tolerance; residuals and slacks are divided by n * max|X|.
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    KktFailed,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
            Outcome::KktFailed => 3,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    info!("gqnet {VERSION}");
    match cli.command {
        Command::Fit(args) => fit(&args),
        Command::Tune(args) => tune(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Kkt(args) => kkt(&args),
    }
}

fn resolve_tau(tau: Auto, y: &[f64]) -> Result<f64> {
    match tau {
        Auto::Value(v) => Ok(v),
        Auto::Auto => {
            let t = estimate_tau(y)?;
            info!("estimated tau = {}", fmt(t));
            Ok(t)
        }
    }
}

fn resolve_gamma(gamma: Option<f64>, data: &Dataset) -> Result<f64> {
    match gamma {
        Some(g) => Ok(g),
        None => Ok(default_gamma(data.design.n(), data.design.groups(), data.design.group_size())?),
    }
}

fn log_dataset(path: &Path, data: &Dataset) {
    info!(
        "dataset = {} (n = {}, g = {}, p = {})",
        path.display(),
        data.design.n(),
        data.design.groups(),
        data.design.group_size()
    );
}

fn log_solver(options: &SolverOptions) {
    info!(
        "solver: epsilon = {}, max_iters = {}, sweep = {:?}; seed = none (deterministic)",
        fmt(options.epsilon),
        options.max_iters,
        options.sweep_mode
    );
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_string(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn pilot_config(data: &Dataset, tau: f64, lambda1: f64, lambda2: f64, gamma: f64) -> Result<PenaltyConfig> {
    let pilot = fit_pilot(&data.design, &data.y, tau, &PilotOptions::default())?;
    let weights = adaptive_weights(&pilot, gamma, ZERO_TOL);
    Ok(PenaltyConfig::new(tau, lambda1, lambda2, gamma, weights)?)
}

fn fit(args: &FitArgs) -> Result<Outcome> {
    let data = read_dataset(&args.dataset)?;
    log_dataset(&args.dataset, &data);
    if args.lambda2 == 0.0 {
        return Err(gqnet_core::Error::ZeroLambda2.into());
    }
    let tau = resolve_tau(args.tau, &data.y)?;
    let gamma = resolve_gamma(args.gamma, &data)?;
    let options = args.solver.options()?;
    info!(
        "fit: tau = {}, lambda1 = {}, lambda2 = {}, gamma = {}, kkt_tol = {}",
        fmt(tau),
        fmt(args.lambda1),
        fmt(args.lambda2),
        fmt(gamma),
        fmt(args.kkt_tol)
    );
    log_solver(&options);

    let pilot = fit_pilot(&data.design, &data.y, tau, &PilotOptions::default())?;
    let weights = adaptive_weights(&pilot, gamma, ZERO_TOL);
    let config = PenaltyConfig::new(tau, args.lambda1, args.lambda2, gamma, weights)?;
    let result = fit_enet(&data.design, &data.y, &config, &pilot, &options)?;
    let report = kkt_check(&data.design, &data.y, &result, &config, args.kkt_tol)?;
    emit(
        args.out.as_deref(),
        &CoefficientFile::from_fit(&data, &result, &config, Some(report.pass)).render(),
    )?;
    Ok(finish_fit(&result, &report))
}

fn finish_fit(result: &FitResult, report: &KktReport) -> Outcome {
    info!(
        "converged = {} after {} iterations; active groups = {}; kkt = {}",
        result.converged,
        result.iterations,
        result.active_set.len(),
        if report.pass { "pass" } else { "fail" }
    );
    if !report.pass {
        warn!("the fit does not satisfy the KKT conditions at tolerance {}", fmt(report.tol));
    }
    if result.converged {
        Outcome::Success
    } else {
        warn!("solver stopped without converging; the best iterate was written");
        Outcome::NotConverged
    }
}

fn tune(args: &TuneArgs) -> Result<Outcome> {
    let data = read_dataset(&args.dataset)?;
    log_dataset(&args.dataset, &data);
    let (n, g, p) = (data.design.n(), data.design.groups(), data.design.group_size());
    let tau = resolve_tau(args.tau, &data.y)?;
    let options = args.solver.options()?;

    let mut grid = if args.grid == "auto" {
        let sigma = args.sigma.unwrap_or_else(|| sample_sd(&data.y));
        info!("grid = auto (sigma = {})", fmt(sigma));
        default_grid(n, g, p, sigma)?
    } else {
        let path = Path::new(&args.grid);
        let file = read_grid(path)?;
        if file.lambda1.is_empty() || file.lambda2.is_empty() {
            return Err(CliError::Input(format!(
                "{}: grid needs at least one lambda1 and one lambda2 value",
                path.display()
            )));
        }
        let gamma = resolve_gamma(args.gamma, &data)?;
        let (grid, duplicates) = TuningGrid::new(file.lambda1, file.lambda2, gamma, 1.0)?;
        if duplicates > 0 {
            warn!("{}: removed {duplicates} duplicate grid value(s)", path.display());
        }
        info!("grid = {}", path.display());
        grid
    };
    if let Some(gamma) = args.gamma {
        grid.gamma = gamma;
    }
    grid.sn = match args.sn {
        Auto::Auto => compute_sn(n, g),
        Auto::Value(v) => v,
    };
    info!(
        "tune: tau = {}, gamma = {}, sn = {}, lambda1 = [{}], lambda2 = [{}], jobs = {}",
        fmt(tau),
        fmt(grid.gamma),
        fmt(grid.sn),
        number::fmt_list(&grid.lambda1_values),
        number::fmt_list(&grid.lambda2_values),
        args.jobs
    );
    log_solver(&options);

    let pilot = fit_pilot(&data.design, &data.y, tau, &PilotOptions::default())?;
    let outcome = with_jobs(args.jobs, || grid_search(&data.design, &data.y, tau, &grid, &pilot, &options))?;

    let mut table = format!(
        "# gqnet {VERSION} criterion table (tau = {}, gamma = {}, sn = {})\n\
         lambda1\tlambda2\tbic\tactive\tconverged\tlog_guarded\tbest\terror\n",
        fmt(tau),
        fmt(grid.gamma),
        fmt(grid.sn)
    );
    for (i, r) in outcome.records.iter().enumerate() {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            fmt(r.lambda1),
            fmt(r.lambda2),
            fmt(r.bic),
            r.active_count,
            r.converged,
            r.log_guarded,
            i == outcome.best_index,
            r.error.as_deref().unwrap_or("-")
        );
    }
    emit(args.out.as_deref(), &table)?;

    let best = &outcome.best;
    let config = &outcome.best_config;
    info!("winner: lambda1 = {}, lambda2 = {}", fmt(config.lambda1), fmt(config.lambda2));
    let report = kkt_check(&data.design, &data.y, best, config, args.kkt_tol)?;
    if let Some(path) = &args.best_out {
        write_string(path, &CoefficientFile::from_fit(&data, best, config, Some(report.pass)).render())?;
    }
    Ok(finish_fit(best, &report))
}

fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let mut scenario = read_scenario(&args.scenario)?;
    if let Some(reps) = args.reps {
        scenario.replications = reps;
    }
    let seed_source = match std::env::var(SEED_VAR) {
        Ok(raw) => {
            scenario.base_seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("{SEED_VAR}=`{raw}` is not an unsigned 64-bit integer")))?;
            SEED_VAR
        }
        Err(_) => "scenario",
    };
    scenario.validate()?;
    let resolved = render_scenario(&scenario);
    info!("seed = {} (from {seed_source}), jobs = {}", scenario.base_seed, args.jobs);
    for line in resolved.lines() {
        info!("scenario: {line}");
    }

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_string(
        &args.out.join("scenario.txt"),
        &format!(
            "# gqnet {VERSION}; seed from {seed_source}; jobs = {}\n{resolved}",
            args.jobs
        ),
    )?;

    let metrics = run_scenario(&scenario, args.jobs)?;
    let summary = aggregate(&metrics, &scenario.true_beta)?;
    for m in metrics.iter().filter(|m| m.failure.is_some()) {
        warn!("replication {} failed: {}", m.index, m.failure.as_deref().unwrap_or(""));
    }
    let summary_text = render_summary(&summary);
    write_string(&args.out.join("summary.tsv"), &summary_text)?;
    write_string(&args.out.join("replications.tsv"), &render_replications(&metrics))?;
    write_string(&args.out.join("timing.tsv"), &render_timing(&metrics, &summary))?;
    emit(None, &summary_text)?;
    info!("wrote {}", args.out.display());
    Ok(Outcome::Success)
}

pub fn render_summary(s: &Summary) -> String {
    let mut out = String::from("metric\tvalue\n");
    let rows: [(&str, String); 13] = [
        ("replications", s.replications.to_string()),
        ("failures", s.failures.to_string()),
        ("median_correct_nonzero", fmt(s.median_correct_nonzero)),
        ("mean_correct_nonzero", fmt(s.mean_correct_nonzero)),
        ("median_correct_zero", fmt(s.median_correct_zero)),
        ("mean_correct_zero", fmt(s.mean_correct_zero)),
        ("sd_error", fmt(s.sd_error)),
        ("mean_abs_prediction_error", fmt(s.mean_abs_prediction_error)),
        ("exact_recovery_fraction", fmt(s.exact_recovery_fraction)),
        ("median_l2_error", fmt(s.median_l2_error)),
        ("converged_fraction", fmt(s.converged_fraction)),
        ("kkt_pass_fraction_converged", fmt(s.kkt_pass_fraction_converged)),
        ("median_estimate_groups", s.median_estimates.len().to_string()),
    ];
    for (name, value) in rows {
        let _ = writeln!(out, "{name}\t{value}");
    }
    for (group, coords) in &s.median_estimates {
        for (k, v) in coords.iter().enumerate() {
            let _ = writeln!(out, "median_beta_{group}_{k}\t{}", fmt(*v));
        }
    }
    out
}

pub fn render_replications(metrics: &[ReplicationMetrics]) -> String {
    let mut out = String::from(
        "index\tcorrect_nonzero\tcorrect_zero\tactive_set\texact_recovery\tl2_error\t\
         mean_abs_prediction_error\tconverged\titerations\tkkt_pass\tlambda1\tlambda2\tfailure\testimate\n",
    );
    for m in metrics {
        let active: Vec<String> = m.active_set.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.index,
            m.correct_nonzero,
            m.correct_zero,
            if active.is_empty() { "-".to_string() } else { active.join(" ") },
            m.exact_recovery,
            fmt(m.l2_error),
            fmt(m.mean_abs_prediction_error),
            m.converged,
            m.iterations,
            m.kkt_pass,
            fmt(m.lambda1),
            fmt(m.lambda2),
            m.failure.as_deref().unwrap_or("-").replace(['\t', '\n'], " "),
            number::fmt_list(&m.estimate)
        );
    }
    out
}

fn render_timing(metrics: &[ReplicationMetrics], summary: &Summary) -> String {
    let mut out = String::from("index\truntime_seconds\n");
    for m in metrics {
        let _ = writeln!(out, "{}\t{}", m.index, fmt(m.runtime_seconds));
    }
    let _ = writeln!(out, "mean\t{}", fmt(summary.mean_runtime_seconds));
    out
}

fn kkt(args: &KktArgs) -> Result<Outcome> {
    let data = read_dataset(&args.dataset)?;
    log_dataset(&args.dataset, &data);
    let file = read_coefficients(&args.coefficients)?;
    let beta = file.coefficients_for(&data)?;
    let tau = args.tau.unwrap_or(file.tau);
    let lambda1 = args.lambda1.unwrap_or(file.lambda1);
    let lambda2 = args.lambda2.unwrap_or(file.lambda2);
    let gamma = args.gamma.unwrap_or(file.gamma);
    info!(
        "kkt: coefficients = {}, tau = {}, lambda1 = {}, lambda2 = {}, gamma = {}, tol = {}; seed = none (deterministic)",
        args.coefficients.display(),
        fmt(tau),
        fmt(lambda1),
        fmt(lambda2),
        fmt(gamma),
        fmt(args.tol)
    );

    let config = pilot_config(&data, tau, lambda1, lambda2, gamma)?;
    let result = FitResult {
        active_set: active_set(&beta, ZERO_TOL),
        iterations: file.iterations,
        converged: file.converged,
        objective_penalized: objective_penalized(&data.design, &data.y, &beta, &config)?,
        objective_quantile: objective_quantile(&data.design, &data.y, &beta, tau)?,
        coefficients: beta,
    };
    let report = kkt_check(&data.design, &data.y, &result, &config, args.tol)?;
    emit(None, &render_kkt(&report, &data))?;
    Ok(if report.pass { Outcome::Success } else { Outcome::KktFailed })
}

pub fn render_kkt(report: &KktReport, data: &Dataset) -> String {
    let mut out = format!(
        "# scaled by n * max|X| = {}; tolerance {}\ngroup\tstatus\tworst\tcomponents\n",
        fmt(report.scale),
        fmt(report.tol)
    );
    for g in &report.groups {
        let (status, worst, values) = match g {
            GroupKkt::Active { residual, max_abs, .. } => ("active", *max_abs, residual),
            GroupKkt::Inactive { slack, min, .. } => ("inactive", *min, slack),
        };
        let verdict = if g.passes(report.tol) { "" } else { " (violated)" };
        let _ = writeln!(
            out,
            "{}\t{status}{verdict}\t{}\t{}",
            data.group_ids[g.group()],
            fmt(worst),
            number::fmt_list(values)
        );
    }
    let _ = writeln!(out, "pass = {}", report.pass);
    out
}
