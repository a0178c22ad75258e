//! Experiment harness around the `lazytensor` driver: single runs, accuracy
//! and reuse-length sweeps, finite-difference error verification, and
//! CSV/JSON report emission.
//!
//! Everything the binary does goes through [`cli_main`], so tests can drive
//! the full pipeline in-process.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lazytensor::driver::{optimal_m, run, DriverConfig, RunReport};
use lazytensor::fdtensor::{build_fd_tensor, fd_error};
use lazytensor::lazy::StepStatus;
use lazytensor::problems::{builtin_problem, OracleCounter, ProblemOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Run,
    SweepEps,
    SweepM,
    VerifyFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => bail!("unknown format `{other}`; use csv or json"),
        }
    }
}

/// Tensor reuse length: a fixed value, the per-problem optimum, or a sweep
/// grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MChoice {
    Auto,
    Fixed(usize),
    List(Vec<usize>),
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub problem: String,
    pub n: usize,
    pub p: usize,
    pub m: MChoice,
    /// Accuracy grid; a single entry outside sweep-eps mode.
    pub eps_grid: Vec<f64>,
    pub l0: f64,
    pub max_outer: Option<usize>,
    pub inner_budget: usize,
    pub seed: u64,
    /// Stepsize grid for verify-fd.
    pub h_grid: Vec<f64>,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

/// What an executed experiment produced.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
    pub artifact: String,
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

pub fn execute(spec: &ExperimentSpec) -> Result<Outcome> {
    match spec.mode {
        Mode::Run => execute_run(spec),
        Mode::SweepEps => execute_sweep_eps(spec),
        Mode::SweepM => execute_sweep_m(spec),
        Mode::VerifyFd => execute_verify_fd(spec),
    }
}

fn make_problem(spec: &ExperimentSpec) -> Result<ProblemOracle> {
    builtin_problem(&spec.problem, spec.n).map_err(|e| anyhow!(e.to_string()))
}

fn driver_config(spec: &ExperimentSpec, m: usize, eps: f64) -> DriverConfig {
    DriverConfig {
        p: spec.p,
        m,
        eps,
        l0: spec.l0,
        max_outer: spec.max_outer,
        inner_budget: spec.inner_budget,
        h_floor_enabled: true,
        seed: spec.seed,
        start: None,
    }
}

fn resolve_m(spec: &ExperimentSpec) -> Result<usize> {
    match &spec.m {
        MChoice::Auto => Ok(optimal_m(spec.p, spec.n)),
        MChoice::Fixed(m) => Ok(*m),
        MChoice::List(_) => bail!("a list of m values is only valid in sweep-m mode"),
    }
}

fn execute_run(spec: &ExperimentSpec) -> Result<Outcome> {
    let problem = make_problem(spec)?;
    let m = resolve_m(spec)?;
    let eps = single_eps(spec)?;
    let cfg = driver_config(spec, m, eps);
    let report = run(&problem, &cfg)?;
    let artifact = match spec.format {
        OutputFormat::Csv => run_report_csv(&report),
        OutputFormat::Json => serde_json::to_string_pretty(&report)?,
    };
    let summary = format!(
        "run problem={} n={} p={} m={}: status={} K={} oracle_calls={} final_grad_norm={:e}",
        spec.problem,
        spec.n,
        spec.p,
        m,
        if report.terminated {
            "solution"
        } else {
            "cap-hit"
        },
        report.k_eps,
        report.oracle_calls,
        report.final_grad_norm
    );
    Ok(Outcome {
        exit_code: if report.terminated { 0 } else { 2 },
        summary,
        artifact,
    })
}

/// One sweep cell: a full driver run from the canonical start.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub eps: f64,
    pub m: usize,
    pub iterations: usize,
    pub oracle_calls: u64,
    pub final_grad_norm: f64,
    pub terminated: bool,
}

fn sweep_cell(report: &RunReport, eps: f64, m: usize) -> SweepCell {
    SweepCell {
        eps,
        m,
        iterations: report.k_eps,
        oracle_calls: report.oracle_calls,
        final_grad_norm: report.final_grad_norm,
        terminated: report.terminated,
    }
}

fn execute_sweep_eps(spec: &ExperimentSpec) -> Result<Outcome> {
    let problem = make_problem(spec)?;
    let m = resolve_m(spec)?;
    if spec.eps_grid.is_empty() {
        bail!("sweep-eps needs a nonempty --eps list");
    }
    let mut cells = Vec::new();
    for &eps in &spec.eps_grid {
        let cfg = driver_config(spec, m, eps);
        let report = run(&problem, &cfg)?;
        cells.push(sweep_cell(&report, eps, m));
    }
    let fit = if cells.len() >= 3 && cells.iter().all(|c| c.terminated) {
        let pairs: Vec<(f64, f64)> = cells
            .iter()
            .map(|c| (c.eps, c.oracle_calls as f64))
            .collect();
        fit_scaling_exponent(&pairs).ok()
    } else {
        None
    };
    let artifact = match spec.format {
        OutputFormat::Csv => {
            let mut s = String::from("eps,m,iterations,oracle_calls,final_grad_norm,terminated\n");
            for c in &cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    c.eps, c.m, c.iterations, c.oracle_calls, c.final_grad_norm, c.terminated
                );
            }
            s
        }
        OutputFormat::Json => serde_json::to_string_pretty(&serde_json::json!({
            "cells": cells,
            "fit": fit,
        }))?,
    };
    let all_ok = cells.iter().all(|c| c.terminated);
    let slope_note = match &fit {
        Some(f) if !f.degenerate => format!(" fitted_slope={:.4}", f.slope),
        _ => String::new(),
    };
    let total: u64 = cells.iter().map(|c| c.oracle_calls).sum();
    let summary = format!(
        "sweep-eps problem={} n={} p={} m={}: cells={} total_oracle_calls={}{}",
        spec.problem,
        spec.n,
        spec.p,
        m,
        cells.len(),
        total,
        slope_note
    );
    Ok(Outcome {
        exit_code: if all_ok { 0 } else { 2 },
        summary,
        artifact,
    })
}

fn execute_sweep_m(spec: &ExperimentSpec) -> Result<Outcome> {
    let problem = make_problem(spec)?;
    let eps = single_eps(spec)?;
    let ms: Vec<usize> = match &spec.m {
        MChoice::List(v) if !v.is_empty() => v.clone(),
        MChoice::Fixed(m) => vec![*m],
        _ => bail!("sweep-m needs a nonempty --m list"),
    };
    let mut cells = Vec::new();
    for &m in &ms {
        let cfg = driver_config(spec, m, eps);
        let report = run(&problem, &cfg)?;
        cells.push(sweep_cell(&report, eps, m));
    }
    let artifact = match spec.format {
        OutputFormat::Csv => {
            let mut s = String::from("m,eps,iterations,oracle_calls,final_grad_norm,terminated\n");
            for c in &cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    c.m, c.eps, c.iterations, c.oracle_calls, c.final_grad_norm, c.terminated
                );
            }
            s
        }
        OutputFormat::Json => serde_json::to_string_pretty(&serde_json::json!({ "cells": cells }))?,
    };
    let all_ok = cells.iter().all(|c| c.terminated);
    let best = cells.iter().min_by_key(|c| c.oracle_calls);
    let summary = format!(
        "sweep-m problem={} n={} p={} eps={:e}: cells={} best_m={} best_oracle_calls={}",
        spec.problem,
        spec.n,
        spec.p,
        eps,
        cells.len(),
        best.map(|c| c.m).unwrap_or(0),
        best.map(|c| c.oracle_calls).unwrap_or(0)
    );
    Ok(Outcome {
        exit_code: if all_ok { 0 } else { 2 },
        summary,
        artifact,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FdErrorRow {
    pub p: usize,
    pub n: usize,
    pub h: f64,
    pub fd_error: f64,
    /// `L sqrt(n)/2 h` when the problem's Lipschitz constant is known.
    pub bound: Option<f64>,
}

fn execute_verify_fd(spec: &ExperimentSpec) -> Result<Outcome> {
    let problem = make_problem(spec)?;
    if spec.h_grid.is_empty() {
        bail!("verify-fd needs a nonempty --h list");
    }
    let z = problem.start();
    let mut rows = Vec::new();
    for &h in &spec.h_grid {
        let counter = OracleCounter::new();
        let tensor = build_fd_tensor(&problem, &counter, &z, h, spec.p)?;
        let err = fd_error(&problem, &z, &tensor)?;
        let bound = problem
            .lipschitz(spec.p)
            .map(|l| l * (spec.n as f64).sqrt() / 2.0 * h);
        rows.push(FdErrorRow {
            p: spec.p,
            n: spec.n,
            h,
            fd_error: err,
            bound,
        });
    }
    let artifact = match spec.format {
        OutputFormat::Csv => {
            let mut s = String::from("p,n,h,fd_error,bound\n");
            for r in &rows {
                let bound = r.bound.map(|b| b.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{},{}", r.p, r.n, r.h, r.fd_error, bound);
            }
            s
        }
        OutputFormat::Json => serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))?,
    };
    let worst = rows.iter().map(|r| r.fd_error).fold(0.0f64, f64::max);
    let summary = format!(
        "verify-fd problem={} n={} p={}: rows={} max_fd_error={:e}",
        spec.problem,
        spec.n,
        spec.p,
        rows.len(),
        worst
    );
    Ok(Outcome {
        exit_code: 0,
        summary,
        artifact,
    })
}

fn single_eps(spec: &ExperimentSpec) -> Result<f64> {
    match spec.eps_grid.as_slice() {
        [eps] => Ok(*eps),
        [] => bail!("--eps is required"),
        _ => bail!("this mode takes a single --eps value"),
    }
}

// ---------------------------------------------------------------------------
// Run-report CSV schema
// ---------------------------------------------------------------------------

pub const RUN_CSV_HEADER: &str = "k,L_k,sigma_k,h_k,alpha_k,f,grad_norm,oracle_calls_cum,flags";

/// One parsed row of the per-iteration schema.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCsvRow {
    pub k: usize,
    pub l_k: f64,
    pub sigma_k: f64,
    pub h_k: f64,
    pub alpha_k: StepStatus,
    pub f: f64,
    pub grad_norm: f64,
    pub oracle_calls_cum: u64,
    pub flags: Vec<String>,
}

/// Serializes the per-iteration records; floats use the shortest
/// round-tripping decimal form.
pub fn run_report_csv(report: &RunReport) -> String {
    let mut s = String::from(RUN_CSV_HEADER);
    s.push('\n');
    for r in &report.records {
        let mut flags = Vec::new();
        if r.h_floored {
            flags.push("h_floored");
        }
        if r.subsolve_failed {
            flags.push("subsolve_fail");
        }
        let flags = if flags.is_empty() {
            "-".to_string()
        } else {
            flags.join("+")
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.k, r.l_k, r.sigma_k, r.h_k, r.status, r.f, r.grad_norm, r.oracle_calls_cum, flags
        );
    }
    s
}

/// Parses the per-iteration schema back; `parse(emit(x)) == x` field for
/// field.
pub fn parse_run_csv(text: &str) -> Result<Vec<RunCsvRow>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    if header != RUN_CSV_HEADER {
        bail!("unexpected header `{header}`");
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            bail!(
                "line {}: expected 9 columns, got {}",
                lineno + 2,
                cols.len()
            );
        }
        rows.push(RunCsvRow {
            k: cols[0].parse()?,
            l_k: cols[1].parse()?,
            sigma_k: cols[2].parse()?,
            h_k: cols[3].parse()?,
            alpha_k: cols[4].parse().map_err(|e: String| anyhow!(e))?,
            f: cols[5].parse()?,
            grad_norm: cols[6].parse()?,
            oracle_calls_cum: cols[7].parse()?,
            flags: if cols[8] == "-" {
                Vec::new()
            } else {
                cols[8].split('+').map(str::to_string).collect()
            },
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Scaling fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingFit {
    /// Least-squares slope of `log(count)` against `log(1/eps)`.
    pub slope: f64,
    /// Set when the counts are constant and the slope is reported as zero.
    pub degenerate: bool,
}

/// Fits the scaling exponent from `(eps, count)` pairs with eps strictly
/// decreasing and positive counts.
pub fn fit_scaling_exponent(pairs: &[(f64, f64)]) -> Result<ScalingFit> {
    if pairs.len() < 3 {
        bail!("need at least 3 pairs, got {}", pairs.len());
    }
    for w in pairs.windows(2) {
        if w[1].0 >= w[0].0 {
            bail!("eps values must be strictly decreasing");
        }
    }
    if pairs.iter().any(|&(e, c)| e <= 0.0 || c <= 0.0) {
        bail!("eps and counts must be positive");
    }
    if pairs.windows(2).all(|w| w[0].1 == w[1].1) {
        return Ok(ScalingFit {
            slope: 0.0,
            degenerate: true,
        });
    }
    let xs: Vec<f64> = pairs.iter().map(|&(e, _)| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, c)| c.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - x_mean) * (y - y_mean);
        den += (x - x_mean) * (x - x_mean);
    }
    Ok(ScalingFit {
        slope: num / den,
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "lazytensor",
    about = "Adaptive tensor-model minimization with lazily refreshed finite-difference derivatives",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One driver run; emits per-iteration records.
    Run(CommonFlags),
    /// Rerun the driver over an accuracy grid; emits one row per eps.
    SweepEps(CommonFlags),
    /// Rerun the driver over a reuse-length grid; emits one row per m.
    SweepM(CommonFlags),
    /// Finite-difference error sweep over a stepsize grid.
    VerifyFd(CommonFlags),
}

#[derive(Debug, Args, Default)]
struct CommonFlags {
    /// Problem name (quadratic, rosenbrock_chain, cos_sum, cubic_sep,
    /// logistic_smooth).
    #[arg(long)]
    problem: Option<String>,
    /// Problem dimension.
    #[arg(long)]
    n: Option<usize>,
    /// Model order (1, 2, or 3).
    #[arg(long)]
    p: Option<usize>,
    /// Tensor reuse length: an integer, `auto`, or a comma list in sweep-m
    /// mode.
    #[arg(long)]
    m: Option<String>,
    /// Target accuracy: a float, or a comma list in sweep-eps mode.
    #[arg(long)]
    eps: Option<String>,
    /// Initial Lipschitz estimate.
    #[arg(long = "L0")]
    l0: Option<f64>,
    /// Safety cap on outer iterations.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Per-subproblem iteration budget.
    #[arg(long)]
    inner_budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Probe stepsizes for verify-fd (comma list).
    #[arg(long)]
    h: Option<String>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// JSON config file mirroring these flags; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config-file mirror of the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    problem: Option<String>,
    n: Option<usize>,
    p: Option<usize>,
    m: Option<String>,
    eps: Option<String>,
    #[serde(rename = "L0")]
    l0: Option<f64>,
    max_outer: Option<usize>,
    inner_budget: Option<usize>,
    seed: Option<u64>,
    h: Option<String>,
    out: Option<PathBuf>,
    format: Option<String>,
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad {what} value `{t}`"))
        })
        .collect()
}

fn build_spec(mode: Mode, flags: CommonFlags) -> Result<ExperimentSpec> {
    let file: ConfigFile = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("cannot parse config {}", path.display()))?
        }
        None => ConfigFile::default(),
    };

    let problem = flags
        .problem
        .or(file.problem)
        .context("--problem is required")?;
    let n = flags.n.or(file.n).context("--n is required")?;
    let p = flags.p.or(file.p).context("--p is required")?;
    if !(1..=3).contains(&p) {
        bail!("--p must be 1, 2, or 3");
    }
    let m = match flags.m.or(file.m).as_deref() {
        None | Some("auto") => MChoice::Auto,
        Some(text) if text.contains(',') => MChoice::List(
            text.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .with_context(|| format!("bad m value `{t}`"))
                })
                .collect::<Result<_>>()?,
        ),
        Some(text) => MChoice::Fixed(
            text.trim()
                .parse()
                .with_context(|| format!("bad m `{text}`"))?,
        ),
    };
    let eps_grid = match flags.eps.or(file.eps) {
        Some(text) => parse_float_list(&text, "eps")?,
        None if mode == Mode::VerifyFd => vec![],
        None => bail!("--eps is required"),
    };
    let h_grid = match flags.h.or(file.h) {
        Some(text) => parse_float_list(&text, "h")?,
        None => vec![],
    };
    let format = match flags.format.or(file.format) {
        Some(text) => text.parse()?,
        None => OutputFormat::Csv,
    };
    Ok(ExperimentSpec {
        mode,
        problem,
        n,
        p,
        m,
        eps_grid,
        l0: flags.l0.or(file.l0).unwrap_or(1.0),
        max_outer: flags.max_outer.or(file.max_outer),
        inner_budget: flags.inner_budget.or(file.inner_budget).unwrap_or(10_000),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        h_grid,
        out: flags.out.or(file.out),
        format,
    })
}

/// Full pipeline: parse arguments, execute, emit. Returns the process exit
/// code (0 solution / all cells solved, 1 usage error, 2 cap hit).
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return 1;
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return 0;
        }
    };
    let (mode, flags) = match cli.command {
        Command::Run(f) => (Mode::Run, f),
        Command::SweepEps(f) => (Mode::SweepEps, f),
        Command::SweepM(f) => (Mode::SweepM, f),
        Command::VerifyFd(f) => (Mode::VerifyFd, f),
    };
    let spec = match build_spec(mode, flags) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    };
    match execute(&spec) {
        Ok(outcome) => {
            match &spec.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, &outcome.artifact) {
                        eprintln!("error: cannot write {}: {e}", path.display());
                        return 1;
                    }
                }
                None => print!("{}", outcome.artifact),
            }
            println!("{}", outcome.summary);
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
