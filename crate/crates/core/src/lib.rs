//! Extractive summarization with a transformer sentence encoder, a Mamba
//! selective state space block over the sentence sequence and a sigmoid
//! relevance head, plus the data, labeling, evaluation and benchmarking
//! pipeline around it.

pub mod bench;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rouge;
pub mod ssm;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Rouge(#[from] rouge::RougeError),
    #[error(transparent)]
    Shape(#[from] nn::ShapeError),
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
    #[error(transparent)]
    Embeddings(#[from] encoder::EmbeddingsError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Stats(#[from] eval::StatsError),
    #[error(transparent)]
    Report(#[from] eval::ReportError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
}

impl Error {
    /// Short stable tag for machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Corpus(_) => "corpus",
            Error::Rouge(_) => "rouge",
            Error::Shape(_) => "shape",
            Error::Encoder(_) => "encoder",
            Error::Embeddings(_) => "embeddings",
            Error::Model(_) => "model",
            Error::Checkpoint(_) => "checkpoint",
            Error::Eval(_) => "eval",
            Error::Stats(_) => "stats",
            Error::Report(_) => "report",
            Error::Bench(_) => "bench",
        }
    }
}
