//! `dcizip`: trace generation, training, compression evaluation, and
//! control-channel FER sweeps, all writing CSV.
//!
//! Exit codes: 0 on success, 1 on runtime or verification failure, 2 on
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Order, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "dcizip", version, about = "Lossless DCI compression toolkit")]
struct Cli {
    /// Seed applied to every stage, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Schema file, overriding the config file.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the scheduler and write a trace file.
    Gen,
    /// Train per-UE models on the training split of a trace.
    Train {
        /// Trace file; defaults to `<out>/trace.bin`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Field sort order, overriding the config file.
        #[arg(long, value_enum)]
        order: Option<Order>,
    },
    /// Compress the test split with every configured method.
    Eval {
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Directory with trained models; defaults to `<out>/models`.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// FER curves for uncompressed, Huffman, and joint payload lengths.
    Fer {
        /// Per-message records from `eval`; defaults to `<out>/records.csv`.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Print the schema, its segment plan, and per-UE field entropies.
    Inspect {
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(s) = cli.schema {
        cfg.schema = Some(s);
    }
    if let Command::Train { order: Some(o), .. } = &cli.command {
        cfg.train.order = *o;
    }
    cfg.validate()?;
    let out = cli.out;
    let in_out = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| out.join(name));
    match cli.command {
        Command::Gen => commands::gen(&cfg, &out),
        Command::Train { trace, .. } => commands::train(&cfg, &in_out(trace, "trace.bin"), &out),
        Command::Eval { trace, models } => {
            commands::eval(&cfg, &in_out(trace, "trace.bin"), &in_out(models, "models"), &out)
        }
        Command::Fer { records } => commands::fer(&cfg, &in_out(records, "records.csv"), &out),
        Command::Inspect { trace } => commands::inspect(&cfg, trace.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err
        .chain()
        .any(|c| c.downcast_ref::<dcizip::Error>().is_some_and(|e| e.is_config()));
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
