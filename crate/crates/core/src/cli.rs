//! Command-line front end.
//!
//! Exit codes: 0 on success (for `solve`, convergence), 2 when a solve stops
//! at the iteration limit, 1 on any error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::FormatError;
use crate::identification::{
    self, classify, estimate_moduli, moduli_report_text, ExactOracle, IdentError, ReferencePointOracle,
    SolutionOracle,
};
use crate::instances::{self, InstanceDescriptor, InstanceError};
use crate::linalg::PSeminorm;
use crate::problem::ProblemSpec;
use crate::solvers::{self, Algorithm, Init, RunSummary, SolverConfig, SolverError, Status, Stepsize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ITERATION_LIMIT: i32 = 2;

/// Default active-set tolerance for instances loaded from files.
pub const DEFAULT_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: FormatError },
    #[error("trace does not match the instance: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ident(#[from] IdentError),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "saddlekit", version, about = "Primal-dual first-order solvers with active-set identification diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a solver and write its trace and summary.
    Solve(SolveArgs),
    /// Partition, identification iteration, stability radius and rate fits for a trace.
    Analyze(AnalyzeArgs),
    /// Sampled metric-subregularity moduli.
    Moduli(ModuliArgs),
    /// List the built-in instances.
    BuiltinList,
    /// Run many independent solves, optionally in parallel.
    Batch(BatchArgs),
}

#[derive(Debug, Args, Clone)]
pub struct InstanceArgs {
    /// Problem file path or `builtin:<name>`.
    #[arg(long, required = true)]
    pub instance: String,
    /// Parameter of `builtin:rotated-house`, in (0, 1).
    #[arg(long)]
    pub c1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub inst: InstanceArgs,
    /// `pdhg`, `admm` or `egm`.
    #[arg(long)]
    pub algo: Algorithm,
    /// Positive real, or `auto` (the instance's pinned stepsize if it has one).
    #[arg(long, default_value = "auto")]
    pub stepsize: Stepsize,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub kkt_tol: f64,
    /// `zero`, `sphere:R` or `file:path`.
    #[arg(long, default_value = "zero")]
    pub init: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV; without it the summary goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary path; defaults to the trace path with extension `summary`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Tolerance for the per-record active-set counts.
    #[arg(long)]
    pub snapshot_eps: Option<f64>,
    /// Accept a PDHG stepsize with η‖A‖ ≥ 1.
    #[arg(long)]
    pub allow_large_pdhg_step: bool,
    /// Store wall-clock time in the summary (makes output non-reproducible).
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace CSV written by `solve`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Summary written next to the trace; defaults to the trace path with extension `summary`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub inst: InstanceArgs,
    /// Active-set tolerance.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// Also estimate moduli with this many samples (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Sampling radius around the solution set.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow a reference solve when the instance has no known solution set.
    #[arg(long)]
    pub aux_solve: bool,
    /// Report path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModuliArgs {
    #[command(flatten)]
    pub inst: InstanceArgs,
    /// Sampling radius around the solution set.
    #[arg(long, default_value_t = 2.0)]
    pub tau: f64,
    /// Accepted samples per modulus.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `identity`, or the metric of `pdhg`, `admm` or `egm` at `--stepsize`.
    #[arg(long, default_value = "identity")]
    pub metric: String,
    #[arg(long, default_value = "auto")]
    pub stepsize: Stepsize,
    /// Active-set tolerance; defaults to the instance's.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Allow a reference solve when the instance has no known solution set.
    #[arg(long)]
    pub aux_solve: bool,
    /// Report path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Repeatable.
    #[arg(long = "instance", required = true)]
    pub instances: Vec<String>,
    /// Parameter of `builtin:rotated-house`, in (0, 1).
    #[arg(long)]
    pub c1: Option<f64>,
    /// Comma-separated algorithm names.
    #[arg(long, value_delimiter = ',', default_value = "pdhg,admm,egm")]
    pub algos: Vec<Algorithm>,
    /// Comma-separated seeds, used by `sphere:R` initializations.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// `zero`, `sphere:R` or `file:path`.
    #[arg(long, default_value = "zero")]
    pub init: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub kkt_tol: f64,
    /// Directory for traces and summaries.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Solve(a) => cmd_solve(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Moduli(a) => cmd_moduli(&a),
        Command::BuiltinList => {
            print!("{}", builtin_list());
            Ok(EXIT_OK)
        }
        Command::Batch(a) => cmd_batch(&a),
    }
}

pub fn builtin_list() -> String {
    instances::BUILTINS
        .iter()
        .map(|(name, about)| format!("builtin:{name}\t{about}\n"))
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: no such file", path.display())))
    }
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::Usage(format!("{}: output directory does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summary_path(trace: &Path) -> PathBuf {
    trace.with_extension("summary")
}

/// Resolves `builtin:<name>` or loads a problem file.
pub fn load_instance(a: &InstanceArgs) -> Result<InstanceDescriptor> {
    if let Some(name) = a.instance.strip_prefix("builtin:") {
        return Ok(instances::builtin(name, a.c1)?);
    }
    if a.c1.is_some() {
        return Err(CliError::Usage("--c1 only applies to builtin:rotated-house".into()));
    }
    let path = Path::new(&a.instance);
    check_input(path)?;
    let spec = instances::load(path)?;
    Ok(InstanceDescriptor {
        name: a.instance.clone(),
        spec,
        known_solution: None,
        stepsizes: Vec::new(),
        eps: DEFAULT_EPS,
        interior_point: None,
        notes: String::new(),
    })
}

/// Parses `zero`, `sphere:R` or `file:path`.
pub fn parse_init(s: &str) -> Result<Init> {
    if s == "zero" {
        return Ok(Init::Zero);
    }
    if let Some(r) = s.strip_prefix("sphere:") {
        return r
            .parse::<f64>()
            .ok()
            .filter(|r| *r >= 0.0 && r.is_finite())
            .map(Init::Sphere)
            .ok_or_else(|| CliError::Usage(format!("bad sphere radius in `{s}`")));
    }
    if let Some(p) = s.strip_prefix("file:") {
        let path = Path::new(p);
        check_input(path)?;
        return Ok(Init::Explicit(instances::load_point(path)?));
    }
    Err(CliError::Usage(format!("--init must be zero, sphere:R or file:path, got `{s}`")))
}

fn solver_config(d: &InstanceDescriptor, alg: Algorithm, stepsize: Stepsize) -> SolverConfig {
    match (stepsize, d.recommended_stepsize(alg)) {
        (Stepsize::Auto, Some(eta)) => SolverConfig::new(alg).with_stepsize(eta),
        (s, _) => {
            let mut c = SolverConfig::new(alg);
            c.stepsize = s;
            c
        }
    }
}

fn check_supported(p: &ProblemSpec, alg: Algorithm) -> Result<()> {
    if alg.supports(p.class()) {
        Ok(())
    } else {
        Err(SolverError::Unsupported {
            algorithm: alg,
            class: p.class(),
        }
        .into())
    }
}

fn exit_code(s: Status) -> i32 {
    match s {
        Status::Converged => EXIT_OK,
        Status::IterationLimit => EXIT_ITERATION_LIMIT,
    }
}

pub fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    if let Some(out) = &a.out {
        check_output(out)?;
    }
    if let Some(s) = &a.summary {
        check_output(s)?;
    }
    let d = load_instance(&a.inst)?;
    check_supported(&d.spec, a.algo)?;
    let mut cfg = solver_config(&d, a.algo, a.stepsize)
        .with_max_iters(a.max_iters)
        .with_kkt_tol(a.kkt_tol)
        .with_init(parse_init(&a.init)?)
        .with_seed(a.seed)
        .with_snapshot_eps(a.snapshot_eps.unwrap_or(d.eps));
    cfg.allow_large_pdhg_step = a.allow_large_pdhg_step;
    let start = Instant::now();
    let trace = solvers::run(&d.spec, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    info!("{} finished: {} after {} iterations", a.algo, trace.status.name(), trace.iterations);
    let summary = RunSummary {
        algorithm: a.algo,
        stepsize: trace.eta,
        stepsize_request: a.stepsize.to_string(),
        iterations: trace.iterations,
        status: trace.status,
        final_kkt: trace.final_kkt(),
        final_point: trace.final_point.clone(),
        instance: a.inst.instance.clone(),
        init: a.init.clone(),
        seed: a.seed,
        max_iters: a.max_iters,
        kkt_tol: a.kkt_tol,
        allow_large_pdhg_step: a.allow_large_pdhg_step,
        wall_time_s: a.record_time.then_some(elapsed),
    };
    match &a.out {
        Some(out) => {
            write(out, &trace.csv_string())?;
            let sp = a.summary.clone().unwrap_or_else(|| summary_path(out));
            write(&sp, &summary.to_text())?;
        }
        None => emit(a.summary.as_deref(), &summary.to_text())?,
    }
    Ok(exit_code(trace.status))
}

fn oracle_for(
    d: &InstanceDescriptor,
    aux_solve: bool,
    aux_alg: Algorithm,
) -> Result<Box<dyn SolutionOracle + '_>> {
    if let Some(ks) = &d.known_solution {
        return Ok(Box::new(ExactOracle(ks)));
    }
    if !aux_solve {
        return Err(CliError::Usage(
            "instance has no known solution set; alpha_L is refused and the other moduli need \
             a reference solution (pass --aux-solve)"
                .into(),
        ));
    }
    let alg = if aux_alg.supports(d.spec.class()) { aux_alg } else { Algorithm::Egm };
    let cfg = solver_config(d, alg, Stepsize::Auto);
    Ok(Box::new(ReferencePointOracle::from_aux_solve(&d.spec, &cfg)?))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32> {
    check_input(&a.trace)?;
    let sp = a.summary.clone().unwrap_or_else(|| summary_path(&a.trace));
    check_input(&sp)?;
    if let Some(out) = &a.out {
        check_output(out)?;
    }
    let rows = solvers::read_csv(&read(&a.trace)?).map_err(|source| CliError::Parse {
        path: a.trace.clone(),
        source,
    })?;
    let summary = RunSummary::parse(&read(&sp)?).map_err(|source| CliError::Parse { path: sp.clone(), source })?;
    let d = load_instance(&a.inst)?;
    let p = &d.spec;
    if summary.final_point.x.len() != p.n() || summary.final_point.y.len() != p.m() {
        return Err(CliError::Mismatch(format!(
            "summary has n = {}, m = {} but the instance has n = {}, m = {}",
            summary.final_point.x.len(),
            summary.final_point.y.len(),
            p.n(),
            p.m()
        )));
    }
    // Replay the run; the solvers are deterministic, so this recovers the iterates.
    let mut cfg = SolverConfig::new(summary.algorithm)
        .with_stepsize(summary.stepsize)
        .with_max_iters(summary.max_iters)
        .with_kkt_tol(summary.kkt_tol)
        .with_init(parse_init(&summary.init)?)
        .with_seed(summary.seed)
        .with_snapshot_eps(a.eps);
    cfg.allow_large_pdhg_step = summary.allow_large_pdhg_step;
    let trace = solvers::run(p, &cfg)?;
    let same = trace.records.len() == rows.len()
        && trace
            .records
            .iter()
            .zip(&rows)
            .all(|(r, c)| r.iter == c.iter && r.kkt.to_bits() == c.kkt.to_bits());
    if !same || trace.final_point != summary.final_point {
        return Err(CliError::Mismatch(
            "replaying the summarized run on this instance does not reproduce the trace".into(),
        ));
    }
    let mut report = identification::analyze_trace(p, &trace, &a.inst.instance, a.eps)?;
    if a.samples > 0 {
        let oracle = oracle_for(&d, a.aux_solve, summary.algorithm)?;
        let part = classify(p, &oracle.reference(), a.eps)?;
        let metric = solvers::p_seminorm(p, summary.algorithm, summary.stepsize);
        report.moduli = Some(estimate_moduli(p, oracle.as_ref(), &part, &metric, a.tau, a.samples, a.seed)?);
    }
    emit(a.out.as_deref(), &report.to_text())?;
    Ok(EXIT_OK)
}

fn metric_for(p: &ProblemSpec, name: &str, stepsize: Stepsize) -> Result<PSeminorm> {
    if name == "identity" {
        return Ok(PSeminorm::identity(p.n(), p.m()));
    }
    let alg: Algorithm = name
        .parse()
        .map_err(|_| CliError::Usage(format!("--metric must be identity, pdhg, admm or egm, got `{name}`")))?;
    let eta = match stepsize {
        Stepsize::Fixed(e) => e,
        Stepsize::Auto => solvers::auto_stepsize(p)?,
    };
    Ok(solvers::p_seminorm(p, alg, eta))
}

pub fn cmd_moduli(a: &ModuliArgs) -> Result<i32> {
    if let Some(out) = &a.out {
        check_output(out)?;
    }
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let d = load_instance(&a.inst)?;
    let p = &d.spec;
    let metric = metric_for(p, &a.metric, a.stepsize)?;
    let oracle = oracle_for(&d, a.aux_solve, Algorithm::Admm)?;
    let eps = a.eps.unwrap_or(d.eps);
    let part = classify(p, &oracle.reference(), eps)?;
    let est = estimate_moduli(p, oracle.as_ref(), &part, &metric, a.tau, a.samples, a.seed)?;
    emit(
        a.out.as_deref(),
        &moduli_report_text(&a.inst.instance, &a.metric, a.samples, a.seed, &est),
    )?;
    Ok(EXIT_OK)
}

fn job_stem(instance: &str, alg: Algorithm, seed: u64) -> String {
    let base: String = instance
        .strip_prefix("builtin:")
        .unwrap_or_else(|| Path::new(instance).file_stem().and_then(|s| s.to_str()).unwrap_or(instance))
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{base}-{alg}-s{seed}")
}

pub fn cmd_batch(a: &BatchArgs) -> Result<i32> {
    if !a.out_dir.is_dir() {
        return Err(CliError::Usage(format!("{}: not a directory", a.out_dir.display())));
    }
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    let mut jobs = Vec::new();
    for inst in &a.instances {
        let ia = InstanceArgs {
            instance: inst.clone(),
            c1: a.c1.filter(|_| inst == "builtin:rotated-house"),
        };
        load_instance(&ia)?;
        for &alg in &a.algos {
            for &seed in &a.seeds {
                let trace = a.out_dir.join(format!("{}.csv", job_stem(inst, alg, seed)));
                jobs.push(SolveArgs {
                    inst: ia.clone(),
                    algo: alg,
                    stepsize: Stepsize::Auto,
                    max_iters: a.max_iters,
                    kkt_tol: a.kkt_tol,
                    init: a.init.clone(),
                    seed,
                    out: Some(trace),
                    summary: None,
                    snapshot_eps: None,
                    allow_large_pdhg_step: false,
                    record_time: false,
                });
            }
        }
    }
    parse_init(&a.init)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", a.jobs)))?;
    let results: Vec<Result<i32>> = pool.install(|| jobs.par_iter().map(cmd_solve).collect());
    let (mut errors, mut limits) = (0, 0);
    for (job, r) in jobs.iter().zip(results) {
        let label = job.out.as_ref().expect("batch jobs write traces").display().to_string();
        match r {
            Ok(EXIT_OK) => println!("{label}\tconverged"),
            Ok(_) => {
                limits += 1;
                println!("{label}\titeration-limit");
            }
            Err(e) => {
                errors += 1;
                println!("{label}\terror: {e}");
            }
        }
    }
    let code = if errors > 0 {
        EXIT_ERROR
    } else if limits > 0 {
        EXIT_ITERATION_LIMIT
    } else {
        EXIT_OK
    };
    Ok(code)
}
