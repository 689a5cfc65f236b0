//! Hybrid retrieval: run the modality pipelines and fuse their results.
//!
//! Fusion is a plain deduplicated union sorted back into original page
//! order; scores never cross modalities. The four modes mirror the ablation
//! axes: static vs adaptive cutoff, single pipeline vs both.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, CorpusHandle, Modality, PageId};
use crate::gmm::{adaptive_recall, GmmError, ModalityRecall, RecallConfig};
use crate::similarity::{score_all, top_k, SimilarityError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Visual pipeline, static top `k_base`.
    Naive,
    /// Visual pipeline, adaptive cutoff.
    Dynamic,
    /// Both pipelines, static top `k_base`, union.
    Hybrid,
    /// Both pipelines, adaptive cutoff, union.
    DynamicHybrid,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 4] = [
        RetrievalMode::Naive,
        RetrievalMode::Dynamic,
        RetrievalMode::Hybrid,
        RetrievalMode::DynamicHybrid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RetrievalMode::Naive => "naive",
            RetrievalMode::Dynamic => "dynamic",
            RetrievalMode::Hybrid => "hybrid",
            RetrievalMode::DynamicHybrid => "dynamic-hybrid",
        }
    }

    fn modalities(&self) -> &'static [Modality] {
        match self {
            RetrievalMode::Naive | RetrievalMode::Dynamic => &[Modality::Visual],
            RetrievalMode::Hybrid | RetrievalMode::DynamicHybrid => {
                &[Modality::Visual, Modality::Textual]
            }
        }
    }

    fn adaptive(&self) -> bool {
        matches!(self, RetrievalMode::Dynamic | RetrievalMode::DynamicHybrid)
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(RetrievalMode::Naive),
            "dynamic" => Ok(RetrievalMode::Dynamic),
            "hybrid" => Ok(RetrievalMode::Hybrid),
            "dynamic-hybrid" | "dynamic_hybrid" => Ok(RetrievalMode::DynamicHybrid),
            other => Err(format!(
                "unknown retrieval mode `{other}` (expected naive, dynamic, hybrid or dynamic-hybrid)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("mode requires the {0} modality, which is not available")]
    MissingModality(Modality),
    #[error("corpus has no pages")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

/// Final retrieval context for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub mode: RetrievalMode,
    pub per_modality: BTreeMap<Modality, ModalityRecall>,
    /// Deduplicated union of all hits, in canonical page order.
    pub merged: Vec<PageId>,
}

/// Runs the pipelines a mode requires and merges their hits.
pub fn retrieve(
    query_id: &str,
    query_vecs: &BTreeMap<Modality, Vec<f64>>,
    corpus: &CorpusHandle,
    cfg: &RecallConfig,
    mode: RetrievalMode,
) -> Result<RetrievalResult, RetrievalError> {
    if corpus.page_count() == 0 {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut per_modality = BTreeMap::new();
    for &modality in mode.modalities() {
        let query_vec = query_vecs
            .get(&modality)
            .ok_or(RetrievalError::MissingModality(modality))?;
        let table = corpus
            .table(modality)
            .ok_or(RetrievalError::MissingModality(modality))?;
        let sv = score_all(query_vec, table, corpus)?;
        let recall = if mode.adaptive() {
            adaptive_recall(&sv, cfg)?
        } else {
            let hits = top_k(&sv, cfg.k_base);
            ModalityRecall {
                k_used: hits.len(),
                hits,
                gmm: None,
                fallback: false,
            }
        };
        per_modality.insert(modality, recall);
    }

    let merged = corpus.canonical_order(
        per_modality
            .values()
            .flat_map(|r| r.hits.iter().map(|(id, _)| id.clone())),
    )?;
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        mode,
        per_modality,
        merged,
    })
}

/// Deduplicated union of two hit lists in canonical page order. Scores are
/// dropped; generation consumes pages, not scores.
pub fn merge(
    r_text: &[(PageId, f64)],
    r_visual: &[(PageId, f64)],
    corpus: &CorpusHandle,
) -> Result<Vec<PageId>, RetrievalError> {
    Ok(corpus.canonical_order(
        r_text
            .iter()
            .chain(r_visual.iter())
            .map(|(id, _)| id.clone()),
    )?)
}
