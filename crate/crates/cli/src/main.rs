//! spmgen: subword vocabulary learning, model training, beam-search
//! decoding, scoring, and alignment inspection from one binary.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "spmgen",
    version,
    about = "Headline generation with a source-prediction training signal"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn or apply a joint subword vocabulary.
    Bpe {
        #[command(subcommand)]
        cmd: BpeCmd,
    },
    /// Train a model and write a checkpoint, manifest, and report.
    Train(commands::TrainArgs),
    /// Decode source text with beam search.
    Decode(commands::DecodeArgs),
    /// Score system output against references (ROUGE-1/2/L).
    Evaluate(commands::EvaluateArgs),
    /// Count repeated and missing tokens in system output.
    Diagnose(commands::DiagnoseArgs),
    /// Export attention and source-prediction alignment matrices.
    Align(commands::AlignArgs),
    /// Generate a synthetic copy-with-deletion corpus.
    GenToy(commands::GenToyArgs),
}

#[derive(Subcommand)]
enum BpeCmd {
    /// Learn merges from whitespace-pretokenized text files.
    Learn(commands::BpeLearnArgs),
    /// Segment text into subword tokens with a learned vocabulary.
    Apply(commands::BpeApplyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Bpe { cmd: BpeCmd::Learn(args) } => commands::bpe_learn(args),
        Cmd::Bpe { cmd: BpeCmd::Apply(args) } => commands::bpe_apply(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::Decode(args) => commands::decode(args),
        Cmd::Evaluate(args) => commands::evaluate(args),
        Cmd::Diagnose(args) => commands::diagnose(args),
        Cmd::Align(args) => commands::align(args),
        Cmd::GenToy(args) => commands::gen_toy(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // one parseable line, newlines folded
            let msg = format!("{err:#}").replace('\n', "; ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
