//! `miniens`: prepare data, train, evaluate and predict.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use miniens::Error;

#[derive(Parser)]
#[command(name = "miniens", version, about = "Multilingual tweet sentiment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean, merge and split the raw corpora.
    Prepare(PrepareArgs),
    /// Train one model and write its checkpoint, TrainLog and manifest.
    Train(TrainArgs),
    /// Score checkpoints on test data and write the results table.
    Eval(EvalArgs),
    /// Classify one text.
    Predict(PredictArgs),
    /// Train a BPE vocabulary per encoder from prepared training data.
    TokenizerTrain(TokenizerTrainArgs),
}

#[derive(Args)]
pub struct PrepareArgs {
    /// English SemEval files from 2013 to 2016, including the dev files.
    #[arg(long, num_args = 1..)]
    pub en_train: Vec<PathBuf>,
    /// English files held out as dev (the 2013 and 2014 test files).
    #[arg(long, num_args = 1..)]
    pub en_dev: Vec<PathBuf>,
    #[arg(long)]
    pub en_test: Option<PathBuf>,
    /// Arabic SemEval training files (subtasks A, B and D).
    #[arg(long, num_args = 1..)]
    pub ar_semeval: Vec<PathBuf>,
    #[arg(long)]
    pub ar_astd: Option<PathBuf>,
    #[arg(long)]
    pub ar_test: Option<PathBuf>,
    /// Shuffle seed for the Arabic 90/10 split. `MINIENS_SEED` wins.
    #[arg(long, default_value_t = miniens::config::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub setup: Option<u8>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub language: Option<String>,
    /// A config file, or a `key=value` override. Repeatable; later wins.
    #[arg(long)]
    pub config: Vec<String>,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Tokenizers written by `tokenizer-train`; trained in-process if absent.
    #[arg(long)]
    pub tokenizers: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// A prepared data directory, or one SemEval file with `--language`.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub language: Option<String>,
    /// Add a majority-vote committee row. Per language, the setup-1
    /// checkpoints vote; without any, every covering checkpoint does.
    #[arg(long)]
    pub vote: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub language: String,
}

#[derive(Args)]
pub struct TokenizerTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = miniens::config::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_) | Error::ConfigMismatch(_) | Error::UnknownLanguage(_) => 1,
                Error::NonFinite { .. } => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::TokenizerTrain(a) => commands::tokenizer_train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
