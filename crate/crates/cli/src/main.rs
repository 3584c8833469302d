use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "fusedstencil",
    version,
    about = "Fused multi-stencil engine: run, tune, benchmark and verify problem specs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance a problem for `[run] steps` steps and print field statistics.
    Run {
        spec: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Search tile plans and print the spec with the fastest one filled in.
    Tune {
        spec: PathBuf,
        /// Machine profile TOML; the spec's `[tune] profile` otherwise.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Write the per-candidate trial log here as CSV.
        #[arg(long)]
        trials: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the tuned spec here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the kernel and emit one CSV row per configuration.
    Bench {
        spec: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare one fused step with a reference; exit status 1 on mismatch.
    Verify {
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = Reference::Oracle)]
        against: Reference,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print machine balance and buffer budgets of a profile.
    Info {
        /// Profile TOML, or the name of a built-in profile.
        #[arg(long)]
        profile: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    /// Separate stencil passes per row and field, then the combiner.
    Oracle,
    /// The direct strategy with a single full-domain tile.
    Direct,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            spec,
            steps,
            workers,
        } => commands::run(&spec, steps, workers),
        Command::Tune {
            spec,
            profile,
            trials,
            workers,
            out,
        } => commands::tune(
            &spec,
            profile.as_deref(),
            trials.as_deref(),
            workers,
            out.as_deref(),
        ),
        Command::Bench {
            spec,
            profile,
            iters,
            workers,
            out,
        } => commands::bench(&spec, profile.as_deref(), iters, workers, out.as_deref()),
        Command::Verify {
            spec,
            against,
            workers,
        } => commands::verify(&spec, against, workers),
        Command::Info { profile } => commands::info(&profile),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
