//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print
//! one line `error[<kind>]: <message>` to standard error.

mod commands;
mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mambasum", version, about = "Extractive summarization with a Mamba sentence-sequence model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Values override the `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON-lines corpus file, or a directory with train/val/test.jsonl.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sentences per extracted summary.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub grad_accum: Option<usize>,
    /// Cap on sentences chosen by the greedy oracle.
    #[arg(long, global = true)]
    pub max_label_sents: Option<usize>,
    /// Precomputed sentence-embedding file used in place of the encoder.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub freeze_encoder: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a diverse subset and write train/val/test splits with id manifests.
    Prepare {
        /// Generate this many synthetic documents instead of reading --corpus.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        n_select: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Attach greedy ROUGE-2 oracle labels.
    Label,
    /// Train on train.jsonl with validation on val.jsonl.
    Train,
    /// Score the model and baselines with ROUGE and paired t-tests.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the selected sentences of one document.
    Summarize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Plain-text document, or `-` for standard input.
        #[arg(long, conflicts_with = "doc_id")]
        input: Option<PathBuf>,
        /// Document id to summarize from --corpus.
        #[arg(long)]
        doc_id: Option<String>,
    },
    /// Time the Mamba block against self-attention over growing lengths.
    Bench {
        /// Comma-separated ascending sequence lengths.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Finite-difference check of the full model on a tiny configuration.
    Gradcheck {
        /// Corrupt one backward rule to demonstrate detection.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Paired t-test between two per-document score CSVs.
    Stats {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// r1, r2 or rl F1.
        #[arg(long, default_value = "r1")]
        metric: String,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub msg: String,
    pub code: u8,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { kind: "usage", msg: msg.into(), code: 2 }
    }

    pub fn runtime(kind: &'static str, msg: impl Display) -> Self {
        Self { kind, msg: msg.to_string(), code: 1 }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::runtime("io", format!("{}: {e}", path.display()))
    }
}

impl From<mambasum::Error> for CliError {
    fn from(e: mambasum::Error) -> Self {
        Self::runtime(e.kind(), e)
    }
}

macro_rules! from_lib_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                mambasum::Error::from(e).into()
            }
        }
    )*};
}

from_lib_error!(
    mambasum::corpus::CorpusError,
    mambasum::rouge::RougeError,
    mambasum::encoder::EmbeddingsError,
    mambasum::model::ModelError,
    mambasum::model::CheckpointError,
    mambasum::eval::EvalError,
    mambasum::eval::StatsError,
    mambasum::eval::ReportError,
    mambasum::bench::BenchError
);

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    match cli.command {
        Command::Prepare { synthetic, clusters, n_select, n_train, n_val, n_test } => {
            let mut cfg = config::RunConfig::resolve("prepare", &common)?;
            let p = &mut cfg.prepare;
            for (dst, src) in [
                (&mut p.clusters, clusters),
                (&mut p.n_select, n_select),
                (&mut p.n_train, n_train),
                (&mut p.n_val, n_val),
                (&mut p.n_test, n_test),
            ] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
            if synthetic.is_some() {
                p.synthetic = synthetic;
            }
            commands::prepare(&cfg)
        }
        Command::Label => commands::label(&config::RunConfig::resolve("label", &common)?),
        Command::Train => commands::train(&config::RunConfig::resolve("train", &common)?),
        Command::Eval { checkpoint } => {
            let mut cfg = config::RunConfig::resolve("eval", &common)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            commands::eval(&cfg)
        }
        Command::Summarize { checkpoint, input, doc_id } => {
            let mut cfg = config::RunConfig::resolve("summarize", &common)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            commands::summarize(&cfg, input.as_deref(), doc_id.as_deref())
        }
        Command::Bench { lengths, repeats } => {
            let mut cfg = config::RunConfig::resolve("bench", &common)?;
            if common.d_model.is_none() && common.config.is_none() {
                cfg.model.ssm.d_model = 64;
            }
            if let Some(l) = lengths {
                cfg.bench.lengths = l;
            }
            if let Some(r) = repeats {
                cfg.bench.repeats = r;
            }
            commands::bench(&cfg)
        }
        Command::Gradcheck { inject_fault } => {
            commands::gradcheck(&config::RunConfig::resolve("gradcheck", &common)?, common.d_model, inject_fault)
        }
        Command::Stats { a, b, metric } => {
            commands::stats(&config::RunConfig::resolve("stats", &common)?, &a, &b, &metric)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind, e.msg.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}
