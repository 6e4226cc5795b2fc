use std::path::PathBuf;

use anyhow::{ensure, Result};
use clap::{Parser, Subcommand};
use fedode_cli::commands::{self, PartitionOverrides, Size, COUNT_HEADER, TRAIN_HEADER};
use fedode_cli::{csv, ExperimentConfig};
use fedode_core::models::{Family, ModelConfig};

/// Federated learning with weight-shared Neural-ODE networks.
///
/// Set RUST_LOG=info (or debug) for progress logs on stderr.
#[derive(Parser)]
#[command(name = "fedode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter counts and communication sizes as CSV on stdout.
    Count {
        /// Comma-separated families; defaults to all three.
        #[arg(long, value_delimiter = ',')]
        family: Vec<Family>,
        /// Comma-separated nominal depths.
        #[arg(long, value_delimiter = ',', conflicts_with = "iters")]
        depth: Vec<usize>,
        /// Comma-separated iteration counts C.
        #[arg(long, value_delimiter = ',')]
        iters: Vec<usize>,
        /// Stage widths, e.g. 64,128,256.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        widths: Option<Vec<usize>>,
        #[arg(long, default_value_t = 3)]
        kernel_size: usize,
        #[arg(long, default_value_t = 8)]
        norm_groups: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Take widths, kernel size, groups and classes from a config's `[model]`.
        #[arg(long, conflicts_with_all = ["widths", "kernel_size", "norm_groups", "classes"])]
        config: Option<PathBuf>,
    },
    /// Train one model centrally and evaluate it at each `train.test_iterations`.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run FedAvg or FedDF as configured, in-process or over loopback TCP.
    Federate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve a socket federation and wait for `fedode client` processes.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Join a socket federation as client `--id`.
    Client {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        id: usize,
        /// Overrides `federated.address`.
        #[arg(long)]
        address: Option<String>,
    },
    /// Dirichlet partition as a per-client class histogram on stdout.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated iteration overrides (ode families only).
        #[arg(long, value_delimiter = ',')]
        iters: Option<Vec<usize>>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Count { family, depth, iters, widths, kernel_size, norm_groups, classes, config } => {
            let families = if family.is_empty() {
                vec![Family::Resnet, Family::Odenet, Family::Dsodenet]
            } else {
                family
            };
            let sizes: Vec<Size> = match (depth.is_empty(), iters.is_empty()) {
                (true, true) => [34, 50, 101].map(Size::Depth).to_vec(),
                (false, _) => depth.into_iter().map(Size::Depth).collect(),
                (true, false) => iters.into_iter().map(Size::Iterations).collect(),
            };
            let mut base = match config {
                Some(path) => ExperimentConfig::load(&path)?.model_config()?,
                None => ModelConfig { kernel_size, norm_groups, num_classes: classes, ..Default::default() },
            };
            if let Some(w) = widths {
                ensure!(w.len() == 3, "--widths: expected three values, got {}", w.len());
                base = base.with_widths([w[0], w[1], w[2]]);
            }
            let rows = commands::count_rows(&base, &families, &sizes)?;
            let fields: Vec<Vec<String>> = rows.iter().map(|r| r.fields()).collect();
            commands::write_stdout(&csv::render(COUNT_HEADER, &fields))?;
            for (family, depth, pct) in commands::reductions(&rows) {
                eprintln!("{family}-{depth}: {pct:.2}% smaller than resnet-{depth}");
            }
        }
        Command::Train { config } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = commands::run_train(&config)?;
            let rows: Vec<Vec<String>> = outcome.rows.iter().map(|r| r.fields()).collect();
            commands::write_stdout(&csv::render(TRAIN_HEADER, &rows))?;
            eprintln!("train top1 {:.4}; checkpoint {}", outcome.train_top1, outcome.checkpoint.display());
        }
        Command::Federate { config } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = commands::run_federate(&config)?;
            report_federation(&config, &outcome);
        }
        Command::Serve { config } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = commands::federate_socket(&config, false)?;
            report_federation(&config, &outcome);
        }
        Command::Client { config, id, address } => {
            let config = ExperimentConfig::load(&config)?;
            let rounds = commands::run_client(&config, id, address.as_deref())?;
            eprintln!("client {id} served {} rounds", rounds.len());
        }
        Command::Partition { config, alpha, clients, seed } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = commands::run_partition(&config, PartitionOverrides { alpha, clients, seed })?;
            commands::write_stdout(&outcome.csv)?;
            eprintln!(
                "alpha {}: mean chi-square {:.4} (seed {}, accepted draw {})",
                outcome.spec.alpha, outcome.mean_chi_square, outcome.spec.seed, outcome.spec.effective_seed
            );
        }
        Command::Eval { checkpoint, config, iters } => {
            let config = ExperimentConfig::load(&config)?;
            let rows = commands::run_eval(&config, &checkpoint, iters.as_deref())?;
            commands::write_stdout(&commands::eval_csv(&rows))?;
        }
    }
    Ok(())
}

fn report_federation(config: &ExperimentConfig, outcome: &commands::FederateOutcome) {
    if let Some(last) = outcome.metrics.last() {
        eprintln!(
            "{} rounds: final loss {:.4} top1 {:.4}; metrics in {}",
            outcome.metrics.len(),
            last.global_loss,
            last.top1,
            config.output_dir().join(commands::ROUNDS_CSV).display()
        );
    }
}
