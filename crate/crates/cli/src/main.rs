use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "perceiver", version, about = "Train, count, benchmark and inspect Perceiver models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (flat TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset; writes metrics.csv, checkpoints,
    /// the resolved config and results.csv to the run directory.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Run directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Zero the video stream of every test item.
        #[arg(long)]
        drop_video: bool,
    },
    /// Parameter and FLOP breakdown as CSV followed by a totals line.
    Count {
        #[command(flatten)]
        config: ConfigArg,
        /// Input rows; defaults to `input_rows` or the dataset's row count.
        #[arg(long)]
        m: Option<usize>,
        /// Also write the breakdown to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOPs and forward wall time against input size.
    Bench {
        #[command(flatten)]
        config: ConfigArg,
        /// Ascending input sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
        m: Vec<usize>,
        /// Timed forward passes per size; the median is reported.
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Skip timing and report counts only.
        #[arg(long)]
        no_time: bool,
        /// Width of the byte-level Transformer baseline.
        #[arg(long, default_value_t = 64)]
        baseline_width: usize,
        #[arg(long, default_value_t = 1)]
        baseline_layers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Logit change under one shared row permutation for the Perceiver and
    /// the reference baselines; with a checkpoint, also permuted accuracy.
    PermuteEval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Random inputs compared.
        #[arg(long, default_value_t = 50)]
        items: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-attention maps (before the softmax) of one test item.
    Attmaps {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        item: usize,
        /// Cross-attend to export, or `all`.
        #[arg(long, default_value = "all")]
        attend: String,
        /// Latent indices to export, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        latents: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One desk-scale run per axis value, aggregated into sweep.csv.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// `key=v1,v2,...` with any run-config key.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => commands::train(&config.config, out),
        Command::Eval { config, checkpoint, drop_video } => commands::eval(&config.config, &checkpoint, drop_video),
        Command::Count { config, m, out } => commands::count(&config.config, m, out),
        Command::Bench { config, m, runs, no_time, baseline_width, baseline_layers, out } => {
            commands::bench(&config.config, &m, (!no_time).then_some(runs), baseline_width, baseline_layers, out)
        }
        Command::PermuteEval { config, checkpoint, items, seed, out } => {
            commands::permute_eval(&config.config, checkpoint, items, seed, out)
        }
        Command::Attmaps { config, checkpoint, item, attend, latents, out } => {
            commands::attmaps(&config.config, &checkpoint, item, &attend, &latents, &out)
        }
        Command::Sweep { config, axis, out } => commands::sweep(&config.config, &axis, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
