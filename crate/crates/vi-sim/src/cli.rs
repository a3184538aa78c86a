//! Command-line interface.
//!
//! Four subcommands: `run` sweeps importance methods over simulation
//! scenarios, `elbow` traces knockoff self-correlation across feature
//! correlations, `theorem-check` verifies that trace against its closed
//! form, and `gen-data` writes a single dataset.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or configuration,
//! 1 for runtime failures and failed checks.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::datagen::{generate_dataset, DataGenError, Scenario, ScenarioSpec};
use crate::harness::{
    elbow_violations, run_elbow, run_experiment, write_elbow_csv, write_results_csv,
    write_summary_csv, ElbowConfig, ExperimentConfig, HarnessError, MethodKind,
};
use crate::models::ForestConfig;
use crate::rng::RngStream;

/// Environment variable consulted for the thread count when `--threads` is
/// absent.
pub const THREADS_ENV: &str = "VI_SIM_THREADS";

#[derive(Parser)]
#[command(
    name = "vi-sim",
    version,
    about = "Variable importance measures under correlated features",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the importance sweep and write result and summary tables
    Run(RunArgs),
    /// Trace knockoff self-correlation across a correlation grid
    Elbow(ElbowArgs),
    /// Check the self-correlation trace against max(0, 2 rho - 1)
    TheoremCheck(TheoremCheckArgs),
    /// Generate one simulated dataset as CSV
    GenData(GenDataArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("correlation").required(true).args(["rho", "rho_grid"])))]
struct RunArgs {
    /// Scenarios to include (1-4, comma separated)
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    scenario: Vec<u8>,
    /// Single feature correlation in [0, 1)
    #[arg(long)]
    rho: Option<f64>,
    /// Correlation grid start:end:step, inclusive of end
    #[arg(long)]
    rho_grid: Option<String>,
    /// Rows per dataset
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Replicates per (scenario, correlation) cell
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Methods to run (comma separated: lm, perm-rf, cpi-lm, cpi-rf)
    #[arg(long, value_delimiter = ',', default_value = "lm,perm-rf,cpi-lm,cpi-rf")]
    methods: Vec<String>,
    /// Master seed; every replicate derives from it deterministically
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Per-replicate result table destination
    #[arg(long)]
    out: PathBuf,
    /// Aggregate table destination
    #[arg(long)]
    summary_out: PathBuf,
    /// Worker threads (0 = one per core); falls back to VI_SIM_THREADS
    #[arg(long)]
    threads: Option<usize>,
    /// Shuffles per feature for permutation importance
    #[arg(long, default_value_t = 10)]
    n_perms: usize,
    /// Training fraction for holdout-based methods
    #[arg(long, default_value_t = 0.5)]
    split_fraction: f64,
    /// Trees per forest
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Features tried per split (default: one third of the features)
    #[arg(long)]
    mtry: Option<usize>,
    /// Smallest leaf size
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Depth cap for each tree (default: unlimited)
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args)]
struct ElbowArgs {
    /// Correlation grid start:end:step, inclusive of end
    #[arg(long, default_value = "0:0.95:0.05")]
    rho_grid: String,
    /// Draws per correlation value
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Estimate the Gaussian model from each draw instead of using the
    /// known one
    #[arg(long)]
    estimate: bool,
    /// Trace table destination
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TheoremCheckArgs {
    /// Correlation grid start:end:step, inclusive of end
    #[arg(long, default_value = "0:0.95:0.05")]
    rho_grid: String,
    /// Draws per correlation value
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Largest tolerated gap between empirical and theoretical values
    #[arg(long, default_value_t = 0.02)]
    tol: f64,
    /// Optional trace table destination
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Scenario (1-4)
    #[arg(long)]
    scenario: u8,
    /// Feature correlation in [0, 1)
    #[arg(long)]
    rho: f64,
    /// Rows to generate
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Noise standard deviation (default: sqrt(0.1))
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Dataset destination
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(_) | HarnessError::UnknownMethod(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DataGenError> for CliError {
    fn from(e: DataGenError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses and executes `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Elbow(args) => cmd_elbow(args),
        Command::TheoremCheck(args) => cmd_theorem_check(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn round10(v: f64) -> f64 {
    (v * 1e10).round() / 1e10
}

/// Expands `start:end:step` into an inclusive grid, each value rounded to
/// ten decimals so grid points print cleanly.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let invalid =
        |msg: String| Err(CliError::Validation(format!("invalid grid '{text}': {msg}")));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return invalid("expected start:end:step".into());
    }
    let nums: Vec<f64> = match parts.iter().map(|p| p.trim().parse()).collect() {
        Ok(v) => v,
        Err(e) => return invalid(format!("{e}")),
    };
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !start.is_finite() || !end.is_finite() || !step.is_finite() {
        return invalid("values must be finite".into());
    }
    if step <= 0.0 {
        return invalid("step must be positive".into());
    }
    if start > end {
        return invalid("start exceeds end".into());
    }
    if !(0.0..1.0).contains(&start) || end >= 1.0 {
        return invalid("correlations must lie in [0, 1)".into());
    }
    if (end - start) / step > 1e6 {
        return invalid("grid has over a million points".into());
    }
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let v = start + i as f64 * step;
        if v > end + 1e-12 {
            break;
        }
        grid.push(round10(v));
        i += 1;
    }
    Ok(grid)
}

/// Writes through a same-directory temporary so readers never observe a
/// half-written table.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).ok_or_else(|| {
        CliError::Validation(format!("'{}' has no file name", path.display()))
    })?;
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("renaming to {}: {e}", path.display())))?;
    Ok(())
}

fn parse_scenario(id: u8) -> Result<Scenario, CliError> {
    Scenario::from_id(id)
        .ok_or_else(|| CliError::Validation(format!("unknown scenario {id}: expected 1-4")))
}

fn resolve_rho_grid(
    rho: Option<f64>,
    rho_grid: Option<&str>,
) -> Result<Vec<f64>, CliError> {
    match (rho, rho_grid) {
        (Some(v), None) => Ok(vec![v]),
        (None, Some(g)) => parse_grid(g),
        _ => unreachable!("clap enforces exactly one of --rho / --rho-grid"),
    }
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0)
}

fn with_thread_pool<R>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError>
where
    R: Send,
{
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("building thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut scenarios = Vec::new();
    for id in args.scenario {
        let s = parse_scenario(id)?;
        if !scenarios.contains(&s) {
            scenarios.push(s);
        }
    }
    let mut methods = Vec::new();
    for m in &args.methods {
        let parsed: MethodKind = m.parse().map_err(CliError::from)?;
        if !methods.contains(&parsed) {
            methods.push(parsed);
        }
    }
    let config = ExperimentConfig {
        scenarios,
        rho_grid: resolve_rho_grid(args.rho, args.rho_grid.as_deref())?,
        n: args.n,
        replicates: args.reps,
        methods,
        master_seed: args.seed,
        forest: ForestConfig {
            n_trees: args.trees,
            mtry: args.mtry,
            min_leaf: args.min_leaf,
            max_depth: args.max_depth,
        },
        split_fraction: args.split_fraction,
        n_perms: args.n_perms,
    };
    config.validate()?;

    let threads = thread_count(args.threads);
    let output = with_thread_pool(threads, || run_experiment(&config))??;

    let mut buf = Vec::new();
    write_results_csv(&mut buf, &output.rows).map_err(HarnessError::from)?;
    write_atomic(&args.out, &buf)?;
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &output.summary).map_err(HarnessError::from)?;
    write_atomic(&args.summary_out, &buf)?;

    println!("wrote {} result rows to {}", output.rows.len(), args.out.display());
    println!("wrote {} summary rows to {}", output.summary.len(), args.summary_out.display());
    Ok(())
}

fn cmd_elbow(args: ElbowArgs) -> Result<(), CliError> {
    let config = ElbowConfig {
        rho_grid: parse_grid(&args.rho_grid)?,
        n: args.n,
        seed: args.seed,
        estimate: args.estimate,
    };
    let rows = run_elbow(&config)?;
    let mut buf = Vec::new();
    write_elbow_csv(&mut buf, &rows).map_err(HarnessError::from)?;
    write_atomic(&args.out, &buf)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_theorem_check(args: TheoremCheckArgs) -> Result<(), CliError> {
    if !args.tol.is_finite() || args.tol <= 0.0 {
        return Err(CliError::Validation(format!(
            "tolerance {} must be positive",
            args.tol
        )));
    }
    let config = ElbowConfig {
        rho_grid: parse_grid(&args.rho_grid)?,
        n: args.n,
        seed: args.seed,
        estimate: false,
    };
    let rows = run_elbow(&config)?;
    if let Some(out) = &args.out {
        let mut buf = Vec::new();
        write_elbow_csv(&mut buf, &rows).map_err(HarnessError::from)?;
        write_atomic(out, &buf)?;
    }

    let violations = elbow_violations(&rows, args.tol);
    if violations.is_empty() {
        let max_dev = rows
            .iter()
            .map(|r| (r.empirical_self_corr - r.theoretical_self_corr).abs())
            .fold(0.0f64, f64::max);
        println!(
            "self-correlation matches max(0, 2 rho - 1) at all {} grid points \
             (n = {}, max deviation {:.4}, tolerance {})",
            rows.len(),
            args.n,
            max_dev,
            args.tol
        );
        Ok(())
    } else {
        for v in &violations {
            eprintln!("{v}");
        }
        Err(CliError::Runtime(format!(
            "{} of {} grid points violate the closed form",
            violations.len(),
            rows.len()
        )))
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let scenario = parse_scenario(args.scenario)?;
    let mut spec = ScenarioSpec::new(scenario, args.rho);
    if let Some(sd) = args.noise_sd {
        if !sd.is_finite() || sd < 0.0 {
            return Err(CliError::Validation(format!(
                "noise standard deviation {sd} must be finite and non-negative"
            )));
        }
        spec = spec.with_noise_sd(sd);
    }
    if args.n == 0 {
        return Err(CliError::Validation("need at least one row".into()));
    }
    let data = generate_dataset(&spec, args.n, &RngStream::from_seed(args.seed))?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(CliError::from)?;
    write_atomic(&args.out, &buf)?;
    println!("wrote {} rows to {}", data.n_rows(), args.out.display());
    Ok(())
}
