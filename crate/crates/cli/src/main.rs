//! `rrr` — operator CLI for the review-then-refine multi-hop QA pipeline.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "rrr",
    version,
    about = "Review-then-refine multi-hop QA: build indexes, ask questions, run evaluations and ablations, inspect traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus (fields: id, title, text).
    Index {
        /// Corpus JSONL file.
        corpus: PathBuf,
        /// Output index file.
        #[arg(long, default_value = "index.json")]
        output: PathBuf,
    },
    /// Answer a single question and write its trace.
    Ask {
        /// The question text.
        question: String,
        /// Identifier recorded in the trace (defaults to a timestamp).
        #[arg(long)]
        question_id: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the configured variant over a sampled dataset and score it.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run several variants over the same sample and compare.
    Ablate {
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render a trace file in the per-step layout.
    Trace {
        /// Trace JSON file.
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Index { corpus, output } => commands::cmd_index(corpus, output),
        Command::Ask {
            question,
            question_id,
            overrides,
        } => commands::cmd_ask(question, question_id.clone(), overrides),
        Command::Eval { overrides } => commands::cmd_eval(overrides),
        Command::Ablate {
            variants,
            overrides,
        } => commands::cmd_ablate(variants, overrides),
        Command::Trace { path } => commands::cmd_trace(path),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
