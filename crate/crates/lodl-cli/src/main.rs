//! `lodl`: drive the decision-loss pipeline from the command line.
//!
//! Exit codes: 0 success, 1 config error, 2 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{Overrides, Resolved};

#[derive(Debug)]
pub enum CliError {
    /// Bad or contradictory configuration; exit 1.
    Config(String),
    /// A pipeline stage failed; exit 2.
    Stage(String),
}

#[derive(Parser, Debug)]
#[command(
    name = "lodl",
    version,
    about = "Learned decision losses for predict-then-optimize pipelines",
    after_help = "Config precedence: built-in defaults, then --config file, then flags.\n\
                  Outputs land under OUT/{data,samples,losses,models,reports}."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory [default: runs]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Top-level seed; every random stream derives from it [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sampling and fitting [default: 1]
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Decision domain: linear, webadv, or portfolio [no default; required]
    #[arg(long, global = true)]
    domain: Option<String>,

    /// Method for train/eval: 2-stage, dfl, or a loss family [default: 2-stage]
    #[arg(long, global = true)]
    method: Option<String>,

    /// Oracle samples per training instance [default: 5000]
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Perturbation scale [default: 1.0 linear, 0.05 webadv/portfolio]
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Training steps per model [default: 500]
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a domain dataset under data/
    GenData,
    /// Solve the oracle around every training label into samples/
    Sample,
    /// Fit one loss family against the sample table into losses/
    Fit {
        /// Loss family to fit [default: directed_quadratic]
        #[arg(long)]
        family: Option<String>,
    },
    /// Train one model under models/
    Train,
    /// Score a trained model's decision quality on the test split
    Eval,
    /// Time sampling, fitting, and training across worker-pool sizes
    BenchParallel,
    /// Time the shared pipeline cost amortized over many trained models
    BenchAmortize,
    /// Sweep perturbation strategies, sample counts, and loss families
    Ablate,
    /// Compare each family's fit error against its decision quality
    Neighborhood,
    /// Run the full method-by-seed grid and write the results table
    ReproduceTable1,
}

fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let file = config::load_file(cli.config.as_deref()).map_err(CliError::Config)?;
    let family = match &cli.command {
        Command::Fit { family } => family.clone(),
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        domain: cli.domain.clone(),
        method: cli.method.clone(),
        k: cli.k,
        alpha: cli.alpha,
        steps: cli.steps,
        family,
    };
    config::resolve(file, overrides).map_err(CliError::Config)
}

fn dispatch(cli: &Cli, resolved: &Resolved) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData => commands::gen_data(resolved),
        Command::Sample => commands::sample(resolved),
        Command::Fit { .. } => commands::fit(resolved),
        Command::Train => commands::train(resolved),
        Command::Eval => commands::eval(resolved),
        Command::BenchParallel => commands::bench_parallel(resolved),
        Command::BenchAmortize => commands::bench_amortize(resolved),
        Command::Ablate => commands::ablate(resolved),
        Command::Neighborhood => commands::neighborhood(resolved),
        Command::ReproduceTable1 => commands::reproduce_table1(resolved),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // bad flags are config errors
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let resolved = match resolve(&cli) {
        Ok(r) => r,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            eprintln!("run `lodl --help` for the full flag list");
            return ExitCode::from(1);
        }
        Err(CliError::Stage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    config::print_resolved(&resolved);
    // cap everything this process runs, not just the harness pools
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.workers)
        .build_global();
    match dispatch(&cli, &resolved) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

// keep the derive checked even when clap's auto-debug-assert path is not hit
#[test]
fn cli_definition_is_consistent() {
    use clap::CommandFactory;
    Cli::command().debug_assert();
}
