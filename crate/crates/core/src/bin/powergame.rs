//! Command-line runner for the power-control experiments.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use powergame::config::{load_config, render_config, validate_in};
use powergame::experiments::{exp_convergence_trace, run_experiment, write_power_trace, ExperimentSpec};
use powergame::Error;

#[derive(Parser)]
#[command(name = "powergame", version, about = "MIMO interference-channel power-control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Validate a config file without running it.
    Check { config: PathBuf },
    /// Run every configured algorithm on one realization and write
    /// per-iteration sum-rate and power traces.
    Trace(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `experiment.trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn config_failure(path: &Path, e: Error) -> Failure {
    let message = match e {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    Failure::Config(format!("{}: {message}", path.display()))
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load(args: &RunArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = load_config(&args.config).map_err(|e| config_failure(&args.config, e))?;
    if let Some(seed) = args.seed {
        spec.experiment.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.experiment.trials = trials;
    }
    let text = fs::read_to_string(&args.config).map_err(|e| io_failure(&args.config, e))?;
    validate_in(&text, &spec).map_err(|e| config_failure(&args.config, e))?;
    Ok(spec)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_meta(args: &RunArgs, spec: &ExperimentSpec, command: &str) -> Result<(), Failure> {
    let path = args.out.join("meta.txt");
    let text = format!(
        "powergame {}\ncommand = {command}\nconfig_file = {}\nseed = {}\ntrials = {}\n\n# resolved configuration\n{}",
        env!("CARGO_PKG_VERSION"),
        args.config.display(),
        spec.experiment.seed,
        spec.experiment.trials,
        render_config(spec),
    );
    fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

fn execute(args: &RunArgs, trace: bool) -> Result<(), Failure> {
    let spec = load(args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    pool.install(|| -> Result<(), Failure> {
        if trace {
            let exp = exp_convergence_trace(&spec)?;
            exp.table().write_csv(create(&args.out.join("results.csv"))?)?;
            for (alg, run) in &exp.runs {
                let path = args.out.join(format!("powers_{alg}.csv"));
                write_power_trace(create(&path)?, &exp.network, run)?;
            }
        } else {
            let table = run_experiment(&spec)?;
            table.write_csv(create(&args.out.join("results.csv"))?)?;
            if table.has_trials() {
                table.write_trials_csv(create(&args.out.join("trials.csv"))?)?;
            }
        }
        Ok(())
    })?;
    write_meta(args, &spec, if trace { "trace" } else { "run" })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => execute(args, false),
        Command::Trace(args) => execute(args, true),
        Command::Check { config } => load_config(config)
            .map(|spec| println!("{}: ok ({} experiment)", config.display(), spec.experiment.kind))
            .map_err(|e| config_failure(config, e)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
