//! Evaluation harness: retrieval metrics, judged answer accuracy, and the
//! ablation grid runner with per-phase latency accounting.

mod ablation;
mod judge;
mod metrics;
mod report;

pub use ablation::{
    run_ablation, CellReport, EvalBackend, EvalOptions, GenerationMode, GridCell, PhaseTimings,
    QueryEval,
};
pub use judge::{judge_accuracy, JudgeVerdict};
pub use metrics::{mrr_at_k, recall_at_k};
pub use report::{write_reports, Aggregates, EvalReport};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("golden page set is empty")]
    EmptyGolden,
    #[error("judge failure: {0}")]
    JudgeFailure(String),
    #[error("generation failed for `{uid}`: {message}")]
    Generation { uid: String, message: String },
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("query `{0}` has no query vectors for the required modalities")]
    MissingQueryVectors(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
