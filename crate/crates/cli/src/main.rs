//! `ekge`: prepare datasets, train and evaluate episodic embedding models,
//! and run episodic-to-semantic projection experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ekge_core::config::ConfigError;
use ekge_core::eval::EvalError;
use ekge_core::models::ModelError;
use ekge_core::training::TrainError;

#[derive(Parser)]
#[command(name = "ekge", version, about = "Episodic knowledge-graph embeddings")]
struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a quadruple TSV, split it and write a prepared dataset directory.
    Prepare(commands::PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(commands::TrainArgs),
    /// Rank a split with a trained checkpoint.
    Eval(commands::EvalArgs),
    /// Project a two-stage checkpoint onto genuine and false semantic triples.
    Project(commands::ProjectArgs),
    /// Generate a synthetic episodic dataset.
    Synth(commands::SynthArgs),
    /// Print the parameter count of a model.
    Paramcount(commands::ParamcountArgs),
}

/// Bad arguments or configuration (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        match cause.downcast_ref::<TrainError>() {
            Some(TrainError::Diverged { .. }) => return 3,
            Some(TrainError::Config(_)) => return 1,
            _ => {}
        }
        if let Some(ConfigError::Json(_) | ConfigError::Toml(_) | ConfigError::Model(_)) = cause.downcast_ref() {
            return 1;
        }
        if let Some(ModelError::UnknownModel(_) | ModelError::ZeroRank | ModelError::RankMismatch(_)) =
            cause.downcast_ref()
        {
            return 1;
        }
        if let Some(EvalError::NonFinite(_)) = cause.downcast_ref() {
            return 3;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Project(a) => commands::project(a),
        Command::Synth(a) => commands::synth(a),
        Command::Paramcount(a) => commands::paramcount(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
