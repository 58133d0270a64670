use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedcos::cli::{cmd_compare, cmd_partition_inspect, cmd_run, cmd_toy, Overrides};

/// Deterministic federated-optimization simulator: FedCos and baselines.
#[derive(Parser)]
#[command(name = "fedcos", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; write JSONL metrics (one line per round
    /// plus a summary line).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Client worker threads; affects speed only, never results.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the config's evaluation cadence.
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Run a built-in quadratic scene and dump the global-model trajectory
    /// as "round,x0,x1" CSV lines.
    Toy {
        /// two_client or three_client.
        #[arg(long)]
        variant: String,
        /// fedavg | fedprox:MU | fedavgm:BETA | fedopt:ETA | fedcos:MU |
        /// base+fedcos:MU.
        #[arg(long, default_value = "fedavg")]
        method: String,
        #[arg(long, default_value_t = 80)]
        rounds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several configs sharing data/model sections; report per-method
    /// rounds-to-target as JSON.
    Compare {
        /// Two or more config files; the first is the baseline.
        #[arg(long, num_args = 2.., required = true)]
        configs: Vec<PathBuf>,
        /// Target accuracy; defaults to the first config's best accuracy.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Print per-client sample counts and label histograms for a config's
    /// partition, without training.
    PartitionInspect {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            eval_every,
        } => cmd_run(
            &config,
            &out,
            &Overrides {
                seed,
                eval_every,
                workers,
            },
        )
        .map(|_| ()),
        Command::Toy {
            variant,
            method,
            rounds,
            out,
        } => cmd_toy(&variant, &method, rounds, &out),
        Command::Compare {
            configs,
            target,
            out,
            seed,
            workers,
            eval_every,
        } => cmd_compare(
            &configs,
            target,
            &out,
            &Overrides {
                seed,
                eval_every,
                workers,
            },
        )
        .map(|_| ()),
        Command::PartitionInspect { config } => {
            cmd_partition_inspect(&config, &mut std::io::stdout().lock())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
