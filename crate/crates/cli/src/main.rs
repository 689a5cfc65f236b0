//! `docrag` command line: corpus ingestion, single-query retrieval and
//! answering, batch evaluation, and the HTTP service.

mod commands;
mod serve;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "docrag", version, about = "Multimodal document RAG engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a corpus manifest into an index directory.
    Ingest(IngestArgs),
    /// Rank and merge pages for one query.
    Retrieve(RetrieveArgs),
    /// Answer one query with the agent workflow.
    Ask(AskArgs),
    /// Run the evaluation grid over a dataset.
    Eval(EvalArgs),
    /// Serve retrieval and answering over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Index directory to (re)build. Defaults to the config's index_dir.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Engine config; only needed when --index is omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Recall knobs, overriding the config file.
#[derive(Args, Clone, Copy)]
struct RecallOverrides {
    /// Static top-K and fallback cutoff; adjusts the clamp band and fit
    /// pool unless they are overridden too.
    #[arg(long)]
    k_base: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    em_max_iter: Option<u32>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    config: PathBuf,
    /// Query uid resolved through the query-embedding sidecars.
    #[arg(long)]
    query_id: String,
    /// naive | dynamic | hybrid | dynamic-hybrid
    #[arg(long)]
    mode: String,
    #[command(flatten)]
    recall: RecallOverrides,
}

#[derive(Args)]
struct AskArgs {
    #[arg(long)]
    config: PathBuf,
    /// Query uid from the dataset.
    #[arg(long)]
    uid: Option<String>,
    /// Ad-hoc query text; needs embedding backends in the config.
    #[arg(long)]
    query: Option<String>,
    /// naive | dynamic | hybrid | dynamic-hybrid
    #[arg(long, default_value = "dynamic-hybrid")]
    mode: String,
    /// Write the full event trace as JSONL.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Scripted transcript file overriding the configured backend.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    recall: RecallOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset file; defaults to the config's dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Grid cells as `<retrieval>,<generation>`; default is the full grid.
    #[arg(long = "grid", num_args = 1..)]
    grid: Vec<String>,
    /// Output directory for report.json and report.csv.
    #[arg(long)]
    out: PathBuf,
    /// Zero out wall-clock timings for byte-stable reports.
    #[arg(long)]
    no_timings: bool,
    #[command(flatten)]
    recall: RecallOverrides,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Listen address override, e.g. 127.0.0.1:7171.
    #[arg(long)]
    listen: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Retrieve(args) => commands::retrieve(args),
        Command::Ask(args) => commands::ask(args),
        Command::Eval(args) => commands::eval(args),
        Command::Serve(args) => serve::serve(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}
