mod commands;
mod config;
mod prep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kgqg_core::training::DatasetPreset;

#[derive(Parser, Debug)]
#[command(name = "kgqg", version, about = "Question generation from knowledge-graph subgraphs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON configuration file (sections: model, train, paths).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset-specific defaults (markup size, RL weight, RL learning rate).
    #[arg(long, global = true, value_enum)]
    dataset: Option<DatasetArg>,
    /// Override one setting, e.g. `--set train.lr=0.0005`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, env = "KGQG_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DatasetArg {
    Wq,
    Pq,
}

impl From<DatasetArg> for DatasetPreset {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Wq => DatasetPreset::Wq,
            DatasetArg::Pq => DatasetPreset::Pq,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate corpora and write the vocabulary and graph cache.
    Preprocess(commands::PreprocessArgs),
    /// Train stage 1 (cross-entropy) or stage 2 (RL fine-tuning).
    Train(commands::TrainArgs),
    /// Decode questions for a corpus with a trained checkpoint.
    Generate(commands::GenerateArgs),
    /// Score a predictions file.
    Evaluate(commands::EvaluateArgs),
    /// Trigram-prefix distribution of generated (or gold) questions.
    Analyze(commands::AnalyzeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Generate(a) => commands::generate(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::Analyze(a) => commands::analyze(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
