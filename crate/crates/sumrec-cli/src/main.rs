//! Operator command line for the sequential user-matrix engine: generate
//! or ingest datasets, train and evaluate models, run ablation and channel
//! sweeps, export attention analytics, and serve the near-real-time
//! user-state API.

mod cmd_data;
mod cmd_eval;
mod cmd_serve;
mod cmd_train;
mod common;

use clap::{Parser, Subcommand};

use common::Outputs;

#[derive(Parser)]
#[command(
    name = "sumrec",
    about = "Multi-channel sequential user encoder: training, evaluation and serving",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-interest dataset.
    GenData(cmd_data::GenDataArgs),
    /// Ingest a behavior-log CSV into an id-based dataset.
    IngestTaobao(cmd_data::IngestArgs),
    /// Train an encoder + ranker on a dataset directory.
    Train(cmd_train::TrainArgs),
    /// Evaluate a checkpoint: gAUC, LogLoss, NDCG@3.
    Eval(cmd_eval::EvalArgs),
    /// Train the full model and the four single-component ablations.
    Ablate(cmd_eval::AblateArgs),
    /// Sweep the channel count for the matrix and reference encoders.
    SweepK(cmd_eval::SweepKArgs),
    /// Export write-attention heatmaps, utilization and readout profile.
    Inspect(cmd_eval::InspectArgs),
    /// Serve the user-state API over HTTP or stdin/stdout pipe.
    Serve(cmd_serve::ServeArgs),
    /// Call a running server.
    Client(cmd_serve::ClientArgs),
}

fn main() {
    let cli = Cli::parse();
    let mut outputs = Outputs::default();
    let result = match &cli.command {
        Command::GenData(args) => cmd_data::gen_data(args, &mut outputs),
        Command::IngestTaobao(args) => cmd_data::ingest(args, &mut outputs),
        Command::Train(args) => cmd_train::run_train(args, &mut outputs),
        Command::Eval(args) => cmd_eval::run_eval(args, &mut outputs),
        Command::Ablate(args) => cmd_eval::run_ablate(args, &mut outputs),
        Command::SweepK(args) => cmd_eval::run_sweep_k(args, &mut outputs),
        Command::Inspect(args) => cmd_eval::run_inspect(args, &mut outputs),
        Command::Serve(args) => cmd_serve::run_serve(args, &mut outputs),
        Command::Client(args) => cmd_serve::run_client(args),
    };
    if let Err(e) = result {
        outputs.remove_all();
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
