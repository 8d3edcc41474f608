//! `pricure` command-line entry points.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pricure::dp::AggregationMode;
use pricure::ErrorKind;

use commands::{FixtureArgs, FixtureKind, Refused, RoleArg};

#[derive(Parser)]
#[command(name = "pricure", version, about = "Private collaborative inference over secret-shared models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write model files, a query dataset, a session config and a manifest.
    Fixtures {
        /// Architecture preset: mnist, fmnist, idc or mimic.
        #[arg(long)]
        spec: String,
        /// Number of model owners.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        m: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override every hidden layer width.
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, value_enum, default_value_t = FixtureKind::Readout)]
        kind: FixtureKind,
        /// Number of query samples in the dataset.
        #[arg(long, default_value_t = 100)]
        queries: usize,
        /// Training samples per class and owner for readout fixtures.
        #[arg(long, default_value_t = 20)]
        train_per_owner: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Aggregation: vote, score[:clip] or none.
        #[arg(long, default_value = "vote")]
        mode: AggregationMode,
        /// Per-client privacy budget; unlimited when absent.
        #[arg(long)]
        budget_cap: Option<f64>,
        /// First of three consecutive local ports for worker A, worker B and the aggregator.
        #[arg(long, default_value_t = 7100)]
        base_port: u16,
    },
    /// Run every party in this process over loopback links.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rounds: Option<u64>,
    },
    /// Run one party over TCP.
    Party {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        manifest: PathBuf,
        /// Owner index (1-based); all owners when absent.
        #[arg(long)]
        index: Option<u32>,
    },
    /// Measure per-model share time and per-sample latency.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rounds: Option<u64>,
    },
    /// Sweep privacy levels and owner counts, writing accuracy as CSV.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.05,0.1,0.5,1")]
        epsilons: Vec<f64>,
        /// Owner counts to evaluate; the session's count when absent.
        #[arg(long, value_delimiter = ',')]
        owners: Vec<u32>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Output CSV; defaults to eval.csv in the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fixtures {
            spec,
            m,
            seed,
            out,
            hidden,
            kind,
            queries,
            train_per_owner,
            epsilon,
            mode,
            budget_cap,
            base_port,
        } => commands::fixtures(&FixtureArgs {
            spec,
            m,
            seed,
            out,
            hidden,
            kind,
            queries,
            train_per_owner: train_per_owner.max(1),
            epsilon,
            mode,
            budget_cap,
            base_port,
        }),
        Command::Simulate { manifest, rounds } => commands::cmd_simulate(&manifest, rounds),
        Command::Party { role, manifest, index } => commands::cmd_party(role, &manifest, index),
        Command::Bench { manifest, rounds } => commands::cmd_bench(&manifest, rounds),
        Command::Eval {
            manifest,
            epsilons,
            owners,
            trials,
            out,
        } => commands::cmd_eval(&manifest, &epsilons, &owners, trials, out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Refused>().is_some() {
        return ErrorKind::Budget.exit_code() as u8;
    }
    if let Some(e) = err.downcast_ref::<pricure::Error>() {
        return e.kind().exit_code() as u8;
    }
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        return ErrorKind::Io.exit_code() as u8;
    }
    ErrorKind::Usage.exit_code() as u8
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
