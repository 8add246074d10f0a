//! `hyperq` command-line interface.

mod error;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyperq::baseline::solve_direct;
use hyperq::bench::{run_suite, InstanceGenerator, SuiteSpec};
use hyperq::io::{instance_to_json, read_instance, ParseMode};
use hyperq::metrics::{mpre, report, utilization};
use hyperq::parallel::{solve_parallel, ParallelConfig};
use hyperq::simulator::{simulate, ServiceDistribution, SimConfig};
use hyperq::solver::{check_assumption, InnerMode, Solution};
use hyperq::{solve, ServiceSystem, SolverConfig};

use crate::error::{CliError, Result};
use crate::output::{AssumptionDoc, OracleDoc, SimulationDoc, SolveDoc, DEFAULT_PRINT_THRESHOLD};

#[derive(Parser)]
#[command(
    name = "hyperq",
    version,
    about = "Stationary analysis of hypercube queueing models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and print the result document.
    Solve(SolveArgs),
    /// Estimate the distribution by discrete-event simulation.
    Simulate(SimulateArgs),
    /// Run an experiment suite and write its CSV table.
    Bench(BenchArgs),
    /// Write a generated instance file.
    Gen(GenArgs),
    /// Print the per-layer contraction bounds.
    CheckAssumption(CheckArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance file (JSON).
    instance: PathBuf,
    /// Drop unknown keys with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Override the waiting-room capacity.
    #[arg(long)]
    buffer: Option<usize>,
}

impl InstanceArgs {
    fn load(&self) -> Result<ServiceSystem> {
        let mode = if self.lenient {
            ParseMode::Lenient
        } else {
            ParseMode::Strict
        };
        let parsed = read_instance(&self.instance, mode).map_err(|e| match e {
            hyperq::Error::Io(source) => CliError::File {
                path: self.instance.display().to_string(),
                source,
            },
            e => e.into(),
        })?;
        for w in &parsed.warnings {
            eprintln!("warning: {w}");
        }
        Ok(match self.buffer {
            Some(c) => parsed.system.with_buffer(c),
            None => parsed.system,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Iterative,
    ClosedForm,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InstanceArgs,
    /// Use the master/worker solver.
    #[arg(long)]
    parallel: bool,
    /// Worker threads for --parallel.
    #[arg(long, env = "HYPERQ_THREADS")]
    workers: Option<usize>,
    /// States per task for --parallel.
    #[arg(long, default_value_t = hyperq::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol_outer: f64,
    /// Defaults to a tenth of --tol-outer.
    #[arg(long)]
    tol_inner: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Iterative)]
    inner_mode: Mode,
    #[arg(long, default_value_t = 10_000)]
    max_outer: usize,
    /// Cross-check against the direct sparse solve.
    #[arg(long)]
    oracle: bool,
    /// Largest accepted MPRE (percent) for --oracle.
    #[arg(long, default_value_t = 1e-6)]
    oracle_tol: f64,
    /// Write the full distribution as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// List every state probability, not only those above the print threshold.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = DEFAULT_PRINT_THRESHOLD)]
    threshold: f64,
    /// Coverage thresholds in travel-time units.
    #[arg(long, value_delimiter = ',')]
    coverage: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the result document here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    input: InstanceArgs,
    /// exp, uniform, lognormal or gamma:<shape>.
    #[arg(long, default_value = "exp")]
    dist: String,
    /// Arrivals per replication.
    #[arg(long, default_value_t = 100_000)]
    arrivals: u64,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of the expected horizon discarded as warm-up.
    #[arg(long, default_value_t = 0.01)]
    warmup: f64,
    /// Report mean response time (needs travel times).
    #[arg(long)]
    response_time: bool,
    #[arg(long, env = "HYPERQ_THREADS")]
    threads: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_PRINT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite file (JSON).
    suite: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    units: usize,
    #[arg(long, default_value_t = 10)]
    nodes: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    heterogeneity: f64,
    #[arg(long, default_value_t = 0)]
    buffer: usize,
    /// Service rate before perturbation (per minute).
    #[arg(long)]
    base_rate: Option<f64>,
    /// Call arrival rate (per minute).
    #[arg(long)]
    arrival_rate: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    input: InstanceArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => create(p)?.write_all(text.as_bytes())?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let sys = args.input.load()?;
    let cfg = SolverConfig {
        tol_outer: args.tol_outer,
        tol_inner: args.tol_inner.unwrap_or(args.tol_outer / 10.0),
        max_outer_iters: args.max_outer,
        inner_mode: match args.inner_mode {
            Mode::Iterative => InnerMode::Iterative,
            Mode::ClosedForm => InnerMode::ClosedForm,
        },
        ..Default::default()
    };
    let (solution, timing): (Solution, _) = if args.parallel {
        let workers = args.workers.unwrap_or_else(default_threads);
        let p = solve_parallel(&sys, &ParallelConfig::new(workers, args.batch_size, cfg))?;
        (p.solution, Some(p.timing))
    } else {
        (solve(&sys, &cfg)?, None)
    };
    let dist = &solution.distribution;
    let metrics = report(dist, &sys, &args.coverage)?;
    let oracle = if args.oracle {
        let exact = solve_direct(&sys)?;
        let mpre_pct = mpre(&exact.full_vector(), &dist.full_vector())?;
        Some(OracleDoc {
            mpre_pct,
            tolerance_pct: args.oracle_tol,
        })
    } else {
        None
    };
    let threshold = if args.full {
        None
    } else {
        Some(args.threshold)
    };
    let doc = SolveDoc::new(&sys, &solution, metrics, oracle, timing, threshold);

    if let Some(path) = &args.csv {
        output::write_distribution_csv(BufWriter::new(create(path)?), dist)?;
    }
    let text = match args.format {
        Format::Json => to_json(&doc)?,
        Format::Text => doc.to_text(),
    };
    emit(args.output.as_deref(), &text)?;

    if !solution.trace.converged {
        return Err(CliError::NotConverged {
            iterations: solution.trace.iterations,
            residual: solution.trace.final_residual(),
        });
    }
    if let Some(o) = doc.oracle {
        if !(o.mpre_pct <= args.oracle_tol) {
            return Err(CliError::OracleMismatch {
                mpre_pct: o.mpre_pct,
                tol: args.oracle_tol,
            });
        }
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let sys = args.input.load()?;
    let distribution = ServiceDistribution::parse(&args.dist)?;
    let cfg = SimConfig {
        distribution,
        arrivals: args.arrivals,
        replications: args.reps,
        seed: args.seed,
        warmup_fraction: args.warmup,
        response_time: args.response_time,
        threads: args.threads.unwrap_or(0),
    };
    let est = simulate(&sys, &cfg)?;
    // non-exponential runs are limited to loss systems, where the exponential
    // solution is the reference
    let analytic = solve(&sys, &SolverConfig::default())?;
    let analytic_mpre = mpre(
        &utilization(&analytic.distribution, &sys),
        &est.mean_utilization(),
    )?;
    let doc = SimulationDoc::new(&sys, &cfg, &args.dist, &est, analytic_mpre, args.threshold);
    let text = match args.format {
        Format::Json => to_json(&doc)?,
        Format::Text => doc.to_text(),
    };
    emit(args.output.as_deref(), &text)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.suite).map_err(|source| CliError::File {
        path: args.suite.display().to_string(),
        source,
    })?;
    let spec: SuiteSpec = serde_json::from_str(&text)?;
    let result = run_suite(&spec);
    match &args.output {
        Some(p) => result.write_csv(BufWriter::new(create(p)?))?,
        None => result.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut g = InstanceGenerator::new(args.units, args.nodes, args.rho, args.seed)
        .with_heterogeneity(args.heterogeneity)
        .with_buffer(args.buffer);
    if let Some(b) = args.base_rate {
        g.base_rate = b;
    }
    if let Some(a) = args.arrival_rate {
        g.arrival_rate = a;
    }
    let sys = g.generate()?;
    emit(args.output.as_deref(), &instance_to_json(sys.raw()))
}

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let sys = args.input.load()?;
    let doc = AssumptionDoc::new(&check_assumption(&sys));
    let text = match args.format {
        Format::Json => to_json(&doc)?,
        Format::Text => doc.to_text(),
    };
    emit(None, &text)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
        Command::CheckAssumption(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
