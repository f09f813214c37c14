//! `mirrorla`: verification suites, benchmarks and experiments.
//!
//! Exit status: 0 success, 1 verification failure, 2 usage, configuration or
//! I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "mirrorla", version, about = "Reflected-feature linear attention: checks, benchmarks and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path [default: $MIRRORLA_OUT_DIR/<command>.csv].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sequence lengths for `bench`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Timed repetitions per point for `bench`.
    #[arg(long, global = true)]
    reps: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq)]
enum Command {
    /// Run the equivalence, isometry, gradient and spectrum suites.
    Check,
    /// Time softmax against linear attention over a grid of lengths.
    Bench,
    /// Export PCA coordinates of normalised kernels per feature map.
    Topology,
    /// Sweep the collapse constructions over seeds.
    Diversity,
    /// Train the mirror and baseline classifiers on the toy task.
    Train,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Bench => "bench",
            Command::Topology => "topology",
            Command::Diversity => "diversity",
            Command::Train => "train",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides { seed: cli.seed, out: cli.out, n_grid: cli.n_grid, reps: cli.reps };
    let cfg = RunConfig::load(cli.config.as_deref(), overrides).map_err(CliError::Setup)?;
    let name = cli.command.name();
    if let Some(c) = cfg.command.as_deref().filter(|c| *c != name) {
        return Err(CliError::Setup(format!("config is for command {c:?}, not {name:?}")));
    }
    let out = cfg.output_path(name);
    match cli.command {
        Command::Check => commands::check(&cfg, &out),
        Command::Bench => commands::bench(&cfg, &out),
        Command::Topology => commands::topology(&cfg, &out),
        Command::Diversity => commands::diversity(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            match e {
                CliError::Setup(m) => eprintln!("error: {m}"),
                CliError::Failed(m) => eprintln!("verification failed: {m}"),
            }
            ExitCode::from(code)
        }
    }
}
