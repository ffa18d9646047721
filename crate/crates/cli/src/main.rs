//! `medfuse`: train, fuse, evaluate and ablate from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
//! Failures print one `error code=<n> kind=<kind> message="..."` line to
//! stderr. `MEDFUSE_THREADS` caps the worker thread pool.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{EvalArgs, FuseArgs};
use error::{CliError, CliResult, EXIT_OK};

#[derive(Parser)]
#[command(name = "medfuse", version, about = "Unsupervised multimodal medical image fusion")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Override the seed from the config (a no-op for deterministic
    /// commands without randomness).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints and loss.csv into output_dir.
    Train {
        /// TOML run config.
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Fuse one pair of registered source images.
    Fuse {
        /// Checkpoint written by `train`.
        checkpoint: PathBuf,
        /// MR source (grayscale).
        source_a: PathBuf,
        /// CT, SPECT or PET source.
        source_b: PathBuf,
        /// Output image path (PNG).
        out: PathBuf,
        /// Treat source B as RGB: fuse its luminance, keep its chrominance.
        #[arg(long)]
        color: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Score a fused image with the nine fusion metrics.
    Eval {
        fused: PathBuf,
        source_a: PathBuf,
        source_b: PathBuf,
        /// Output CSV path.
        out_csv: PathBuf,
        /// Row label; defaults to the fused file name.
        #[arg(long)]
        pair_id: Option<String>,
        /// Runtime in seconds recorded in the runtime_s column.
        #[arg(long, default_value_t = 0.0)]
        runtime: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train and compare the max, average and WDEPP pooling variants.
    Ablate {
        /// TOML run config.
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("MEDFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::usage(format!("MEDFUSE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot configure {n} worker threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, seed } => commands::train_cmd(&config, seed.seed),
        Command::Fuse { checkpoint, source_a, source_b, out, color, seed: _ } => {
            commands::fuse_cmd(&FuseArgs { checkpoint, source_a, source_b, out, color })
        }
        Command::Eval { fused, source_a, source_b, out_csv, pair_id, runtime, seed: _ } => {
            commands::eval_cmd(&EvalArgs { fused, source_a, source_b, out_csv, pair_id, runtime })
        }
        Command::Ablate { config, seed } => commands::ablate_cmd(&config, seed.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            let err = CliError::usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.machine_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
