//! Multimodal document retrieval and generation engine.
//!
//! The engine retrieves pages from a corpus of visually rich documents
//! through two dense pipelines (page-image embeddings and OCR-chunk
//! embeddings), picks a per-query retrieval cutoff by fitting a
//! two-component Gaussian mixture to the similarity scores, fuses both
//! pipelines by union in original page order, and answers queries with an
//! iterative seeker/inspector/answer agent loop over a chat-completion
//! backend. A scripted transcript backend makes every code path runnable
//! and testable fully offline.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod gmm;
pub mod retrieval;
pub mod similarity;
pub mod workflow;

pub use config::{BackendProfile, ConfigError, EngineConfig};
pub use corpus::{
    ingest_corpus, load_dataset, open_corpus, ChunkId, ChunkRecord, CorpusError, CorpusHandle,
    Modality, PageId, PageRecord, QueryRecord,
};
pub use gmm::{
    adaptive_recall, dynamic_k, fit_gmm, fit_gmm_traced, responsibility_high, EmIteration,
    GmmError, GmmFit, ModalityRecall, RecallConfig,
};
pub use retrieval::{merge, retrieve, RetrievalError, RetrievalMode, RetrievalResult};
pub use similarity::{cosine, score_all, top_k, ScoreVector, SimilarityError};
pub use workflow::{
    run_workflow, Termination, Trace, TraceEvent, WorkflowLimits, WorkflowResult, WorkflowState,
    WorkflowStatus,
};
