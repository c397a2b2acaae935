//! `collabdm` command-line front end.

mod commands;
mod dataset;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use collabdm::eval::Architecture;
use collabdm::orchestrator::Mode;

use crate::dataset::DataArgs;

#[derive(Debug, Parser)]
#[command(name = "collabdm", version, about = "Collaborative dataset distillation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one distillation run and write its artifacts.
    Run(RunArgs),
    /// Train classifiers on a saved synthetic set and test them on real data.
    Eval(EvalArgs),
    /// Summarize a saved client payload (.cdm).
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// collabdm, localdm or centralized.
    #[arg(long, default_value_t = Mode::CollabDm)]
    pub mode: Mode,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub clients: usize,
    /// Dirichlet concentration of the label skew.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Fraction of clients scheduled per round.
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub ipc: usize,
    /// Server iterations T.
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Real images per class and step.
    #[arg(long, default_value_t = 512)]
    pub batch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr_local: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lr_server: f64,
    #[arg(long, default_value_t = 0.5)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1000)]
    pub local_iters: usize,
    /// Partition-and-expand factor; 1 disables it.
    #[arg(long, default_value_t = 1)]
    pub pae: usize,
    /// Images per class kept at the server; defaults to --ipc.
    #[arg(long)]
    pub global_ipc: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub eval_every: usize,
    /// Skip accuracy evaluation.
    #[arg(long)]
    pub no_eval: bool,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Encoder depth.
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Encoder width.
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: std::path::PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifierArgs {
    /// Evaluation architecture, e.g. convnet-2x16 or mlp-64.
    #[arg(long, default_value = "convnet-2x16")]
    pub arch: Architecture,
    /// Classifiers trained per evaluation point.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub eval_lr: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Synthetic set written by `run` (synthetic.cdt).
    #[arg(long)]
    pub synthetic: std::path::PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Extra architectures for a cross-architecture matrix.
    #[arg(long, value_delimiter = ',')]
    pub also: Vec<Architecture>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the accuracy CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub payload: std::path::PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, collabdm::Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
