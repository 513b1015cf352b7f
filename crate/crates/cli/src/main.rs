//! `recflow` command line: one subcommand per pipeline stage.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the command
//! itself fails. Every successful run prints a one-line JSON summary on
//! stdout. Set `EASYREC_LOG` (e.g. `info`, `debug`) for logs on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "recflow", version, about = "CTR model training, serving and online-learning tools")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Pipeline config (JSON).
    #[arg(short = 'c', long)]
    pub config: PathBuf,
    /// Overrides `train_config.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write its artifact and report to a model directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training CSV; defaults to `data_config.train_path`.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Evaluation CSV; defaults to `data_config.eval_path`.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        model_dir: PathBuf,
        /// Publish parameter deltas to `file:<prefix>` or `tcp://host:port`.
        #[arg(long)]
        queue: Option<String>,
    },
    /// Evaluate a model artifact on a CSV.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Evaluation CSV; defaults to `data_config.eval_path`.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Write the serving artifact of a trained model directory.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Serve a model over HTTP, applying deltas from a queue.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queue: Option<String>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = 10_000)]
        cache_capacity: usize,
        #[arg(long, default_value_t = 1_000)]
        poll_interval_ms: u64,
    },
    /// Random search with median stopping.
    Hpo {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Search space (JSON).
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        max_trials: usize,
        /// Epochs per trial; defaults to `train_config.num_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        no_median_stopping: bool,
        #[arg(long, default_value_t = 3)]
        min_completed: usize,
        /// Trials JSON output.
        #[arg(long, default_value = "trials.json")]
        output: PathBuf,
    },
    /// Rank slots with learned dropout gates and emit a pruned feature config.
    SelectFeatures {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation CSV used for the gate updates.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        keep_fraction: f64,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long)]
        gate_learning_rate: Option<f64>,
        /// Receives `importance.json` and `feature_config.json`.
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Join impression, click and feature-log events into training samples.
    StreamJoin {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON-lines events: a file, `-` for stdin, or `tcp://host:port`.
        #[arg(long)]
        input: String,
        /// Samples CSV.
        #[arg(long)]
        output: PathBuf,
        /// Also write the counters here as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000)]
        window_ms: i64,
        #[arg(long, default_value_t = 5_000)]
        lateness_ms: i64,
    },
    /// Score a CSV through the serving path.
    PredictFile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EASYREC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(summary) => {
            if let Some(s) = summary {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
