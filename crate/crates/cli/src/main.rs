mod error;
mod evaluate;
mod experiment;
mod settings;
mod stats;
mod svg;
mod tag;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

/// Character-level morphological tagger with cross-lingual transfer.
#[derive(Debug, Parser)]
#[command(name = "morphtag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it with a per-epoch report
    Train(Box<train::TrainArgs>),
    /// Tag CoNLL-U or whitespace-tokenized text
    Tag(tag::TagArgs),
    /// Score predictions against a gold CoNLL-U file
    Eval(evaluate::EvalArgs),
    /// Run a grid of training cells from a TOML spec
    Experiment(experiment::ExperimentArgs),
    /// Sentence, token and tag counts per CoNLL-U file
    Stats(stats::StatsArgs),
    /// Print the header and parameter shapes of a model file
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train::run(*a),
        Command::Tag(a) => tag::run(a),
        Command::Eval(a) => evaluate::run(a),
        Command::Experiment(a) => experiment::run(a),
        Command::Stats(a) => stats::run(a),
        Command::Inspect { model } => {
            let (m, seed) = morphtag::persist::load_model_file(&model)?;
            print!("{}", morphtag::persist::describe(&m, seed));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("morphtag: {e}");
            ExitCode::from(e.code)
        }
    }
}
