//! `duetrank`: build a vocabulary, train Duet v2 models, re-rank candidate
//! lists and score runs.
//!
//! Exit status: 0 success, 2 bad input (i/o, format, invalid settings),
//! 3 numeric failure during training, 4 checkpoint/vocabulary mismatch.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use duet_core::eval::RunFormat;
use duet_core::train::SampleMode;
use duet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "duetrank", version, about = "Duet v2 passage re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the capped vocabulary and IDF table from a passage collection.
    Vocab(VocabArgs),
    /// Train one model, or a bagged ensemble.
    Train(TrainArgs),
    /// Re-rank candidate passages with trained models or BM25.
    Rank(RankArgs),
    /// Compute MRR@k of a run against relevance judgments.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Passage collection, one passage per line.
    collection: PathBuf,
    /// Output directory; receives `vocab.tsv`.
    #[arg(long, short)]
    out: PathBuf,
    /// Number of content terms kept, most frequent first.
    #[arg(long, default_value_t = duet_core::textpipe::DEFAULT_VOCAB_CAP)]
    cap: usize,
    /// Read passages from a candidates file (`qid\tpid\tquery\tpassage`),
    /// counting each passage id once.
    #[arg(long, conflicts_with = "with_ids")]
    from_candidates: bool,
    /// Collection lines are `pid\tpassage`.
    #[arg(long)]
    with_ids: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training triples, `query\tpositive\tnegative` per line.
    triples: PathBuf,
    /// Vocabulary table written by `duetrank vocab`.
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory for checkpoints and reports.
    #[arg(long, short)]
    out: PathBuf,
    /// `key = value` settings file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pre-trained word vectors (`word v1 .. vD` per line) for the embedding
    /// table.
    #[arg(long)]
    glove: Option<PathBuf>,

    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 1024)]
    minibatches: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// RankNet scale.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Seed; falls back to DUETRANK_SEED, then 0.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// sequential, shuffle or bootstrap. Bagged runs default to shuffle.
    #[arg(long, default_value_t = SampleMode::Sequential)]
    sample_mode: SampleMode,

    #[arg(long, default_value_t = 20)]
    query_cap: usize,
    #[arg(long, default_value_t = 200)]
    passage_cap: usize,
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    #[arg(long, default_value_t = 300)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 3)]
    conv_width: usize,
    #[arg(long, default_value_t = 100)]
    pool_window: usize,

    /// Binary exact-match matrix instead of IDF-weighted.
    #[arg(long)]
    no_idf: bool,
    /// tanh activations instead of ReLU.
    #[arg(long)]
    tanh: bool,
    /// Linear combination of the two sub-model scores instead of the MLP.
    #[arg(long)]
    linear_combine: bool,
    /// Separate query and passage embedding tables.
    #[arg(long)]
    split_embeddings: bool,
    /// Keep the embedding table fixed during training.
    #[arg(long)]
    freeze_embeddings: bool,

    /// Number of bagged models; model k gets seed + k.
    #[arg(long, default_value_t = 1)]
    bagging: usize,
    /// Worker threads. Results do not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Candidates, `qid\tpid\tquery\tpassage` per line.
    candidates: PathBuf,
    /// Output run file.
    #[arg(long, short)]
    out: PathBuf,
    /// Vocabulary table the checkpoints were trained with.
    #[arg(long, required_unless_present = "bm25")]
    vocab: Option<PathBuf>,
    /// Checkpoint to score with; repeat for a mean-fused ensemble.
    #[arg(
        long = "checkpoint",
        short = 'c',
        required_unless_present = "bm25",
        conflicts_with = "bm25"
    )]
    checkpoints: Vec<PathBuf>,
    /// Rank with BM25 over the candidate passages instead of a model.
    #[arg(long)]
    bm25: bool,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    /// trec or marco.
    #[arg(long, default_value_t = RunFormat::Trec)]
    format: RunFormat,
    #[arg(long, default_value = "duet")]
    run_name: String,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run file (trec or marco).
    run: PathBuf,
    /// Relevance judgments, `qid 0 pid rel` per line.
    #[arg(long)]
    qrels: PathBuf,
    /// Rank cutoff.
    #[arg(long, default_value_t = duet_core::eval::DEFAULT_CUTOFF)]
    k: usize,
    /// JSON metrics file; defaults to the run path plus `.mrr.json`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Arguments given on the command line, with their raw values.
fn explicit(m: &ArgMatches) -> Vec<(String, String)> {
    m.ids()
        .filter(|id| m.value_source(id.as_str()) == Some(ValueSource::CommandLine))
        .map(|id| {
            let raw = m
                .get_raw(id.as_str())
                .and_then(|mut v| v.next())
                .map(|v| v.to_string_lossy().into_owned())
                .unwrap_or_default();
            (id.to_string(), raw)
        })
        .collect()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::ConfigMismatch(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let sub = matches
        .subcommand()
        .map(|(_, m)| m)
        .expect("subcommand is required");
    let result = match cli.command {
        Command::Vocab(a) => commands::vocab(&a),
        Command::Train(a) => commands::train(&a, &explicit(sub)),
        Command::Rank(a) => commands::rank(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("duetrank: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
