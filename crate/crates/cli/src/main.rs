use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use car_heavytail::designs::{self, DesignConfig, Scheme};
use car_heavytail::io::{self as cio, Emittable, Format, RunConfig};
use car_heavytail::sim::{self, Execution, GridConfig};
use car_heavytail::Error;

#[derive(Parser)]
#[command(
    name = "car-heavytail",
    version,
    about = "Covariate-adaptive randomization with heavy-tailed outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign treatments to the units of a CSV file.
    Assign(AssignArgs),
    /// Estimate treatment effects on an observed dataset.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo grid described by a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct AssignArgs {
    /// Unit table with a `stratum` column and optional `cov_*` columns.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV (standard output when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// sr, str, bcd or min.
    #[arg(long)]
    scheme: Scheme,
    #[arg(long, default_value_t = 0.5)]
    pi: f64,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    coin_p: Option<f64>,
    /// Comma-separated minimization weights, one per `cov_*` column.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset CSV with `outcome`, `treatment` and `stratum` columns.
    #[arg(long)]
    data: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Bandwidth multiplier for the variance-step score models.
    #[arg(long)]
    var_bandwidth_scale: Option<f64>,
    #[arg(long, default_value = "csv")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON grid configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the replication count of the config.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; CAR_THREADS takes precedence when set.
    #[arg(long)]
    threads: Option<usize>,
    /// Run replications on the current thread only.
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value = "csv")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn writer(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn run_assign(args: AssignArgs) -> anyhow::Result<()> {
    let units = cio::read_units(
        File::open(&args.input).with_context(|| format!("cannot open {}", args.input.display()))?,
    )?;
    let config = DesignConfig {
        scheme: args.scheme,
        pi: args.pi,
        block_size: args.block_size,
        coin_p: args.coin_p,
        weights: args.weights,
        seed: args.seed,
    };
    let a = designs::assign(&config, &units.strata, units.covariates.as_deref())?;
    cio::write_assignment(&units, &a, writer(args.output.as_deref())?)?;
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let dataset = cio::load_dataset(&args.data)?;
    let mut config = match &args.config {
        Some(p) => RunConfig::from_json(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(v) = args.var_bandwidth_scale {
        config.estimator_config.var_bandwidth_scale = v;
    }
    let report = cio::analyze(&dataset.data, &config)?;
    for f in &report.failures {
        log::warn!("{}: {}", f.estimator, f.message);
    }
    cio::emit(
        Emittable::Analysis(&report),
        args.format,
        writer(args.output.as_deref())?,
    )?;
    if report.reports.is_empty() && !report.failures.is_empty() {
        return Err(Error::NotApplicable(format!(
            "every estimator failed; first failure: {}",
            report.failures[0].message
        ))
        .into());
    }
    Ok(())
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var("CAR_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("CAR_THREADS='{v}' is not a count")))?;
            Ok(Some(n))
        }
        _ => Ok(flag),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(n: Option<usize>) -> anyhow::Result<()> {
    if n.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; running on one thread");
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut grid: GridConfig =
        serde_json::from_str(&read_text(&args.config)?).map_err(Error::from)?;
    if let Some(r) = args.reps {
        grid.reps = r;
    }
    if let Some(s) = args.seed {
        grid.seed = s;
    }
    configure_threads(thread_count(args.threads)?)?;
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let cells = sim::run_grid(&grid, exec)?;
    cio::emit(
        Emittable::Grid(&cells),
        args.format,
        writer(args.output.as_deref())?,
    )?;
    Ok(())
}

/// 2 for bad input (including unreadable files), 3 for failures while estimating.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() || matches!(e, Error::Io(_)) => 2,
        Some(_) => 3,
        None if err.downcast_ref::<io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Assign(a) => run_assign(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Simulate(a) => run_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
