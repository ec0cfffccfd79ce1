mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

/// Multi-fidelity Bayesian optimization campaigns, scans and comparisons.
#[derive(Parser)]
#[command(name = "imfbo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    Problem1,
    Problem2,
    Problem2Structured,
    IsingSquare,
    IsingTriangular,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MeanChoice {
    Zero,
    Peak,
    Piecewise,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeChoice {
    Batch,
    Interactive,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FidelityChoice {
    Low,
    High,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset campaign config as JSON.
    Config {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Override the surrogate mean.
        #[arg(long, value_enum)]
        mean: Option<MeanChoice>,
        #[arg(long, value_enum, default_value = "batch")]
        mode: ModeChoice,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a campaign from a config file to completion.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scripted policy answering prompts of interactive configs.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the final campaign document.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report the MSE of the final high-fidelity prediction.
        #[arg(long)]
        mse: bool,
        /// Ground-truth cache directory used with --mse.
        #[arg(long)]
        truth_dir: Option<PathBuf>,
    },
    /// Run the high-fidelity-only baseline for a config's objective and surrogate.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an objective over a coupling (or x) grid and write CSV.
    Scan {
        /// Config whose objective is scanned; defaults to the square-lattice Ising pair.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "high")]
        fidelity: FidelityChoice,
        #[arg(long, default_value_t = 0.5)]
        from: f64,
        #[arg(long, default_value_t = 2.0)]
        to: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Independent repetitions per grid point.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Sessions are stored here; in memory only when omitted.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Re-run a persisted campaign from its initial config and policy log and
    /// compare histories. Exits with status 1 on any difference.
    Replay {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a comparison plan and write the report, error maps and timings.
    Compare {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Config { preset, mean, mode, seed } => commands::config(preset, mean, mode, seed),
        Command::Run { config, policy, seed, out, mse, truth_dir } => {
            commands::run(&config, policy.as_deref(), seed, out.as_deref(), mse, truth_dir.as_deref())
        }
        Command::Baseline { config, seed, out } => commands::baseline(&config, seed, out.as_deref()),
        Command::Scan { config, fidelity, from, to, step, repeats, seed, out } => {
            commands::scan(config.as_deref(), fidelity, (from, to, step), repeats, seed, out.as_deref())
        }
        Command::Serve { port, host, data_dir } => commands::serve(&host, port, data_dir),
        Command::Replay { state, out } => {
            if !commands::replay(&state, out.as_deref())? {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Compare { plan, out, workers } => commands::compare(&plan, &out, workers),
    }
}
