//! Python bindings: corpus access, retrieval, the GMM cutoff, metrics,
//! agent-reply parsing, and scripted workflow runs.
//!
//! Build the extension module and import it:
//!
//! ```text
//! cargo build -p docrag-py --release
//! cp target/release/libdocrag.so docrag.so   # import docrag
//! ```

// #[pyfunction] expansions trip this lint on pyo3 0.22.
#![allow(clippy::useless_conversion)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use docrag_core::corpus::{self, CorpusHandle, Modality, PageId};
use docrag_core::eval;
use docrag_core::gateway::{AgentMessageKind, Gateway, ScriptedSession};
use docrag_core::gmm::{self, RecallConfig};
use docrag_core::retrieval::{self, RetrievalMode, RetrievalResult};
use docrag_core::similarity::{self, ScoreVector};
use docrag_core::workflow::{self, WorkflowLimits};

fn value_error(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// serde_json value -> native Python object.
fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyObject {
    match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::new_bound(py, items.iter().map(|v| json_to_py(py, v)));
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (key, val) in map {
                dict.set_item(key, json_to_py(py, val))
                    .expect("dict insert");
            }
            dict.into_py(py)
        }
    }
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyObject {
    json_to_py(py, &serde_json::to_value(value).expect("value serializes"))
}

fn parse_modality_vecs(
    query_vecs: BTreeMap<String, Vec<f64>>,
) -> PyResult<BTreeMap<Modality, Vec<f64>>> {
    query_vecs
        .into_iter()
        .map(|(name, vec)| {
            let modality: Modality = name.parse().map_err(value_error)?;
            Ok((modality, vec))
        })
        .collect()
}

fn recall_config(k_base: usize, em_tol: f64, em_max_iter: u32) -> PyResult<RecallConfig> {
    let cfg = RecallConfig {
        em_tol,
        em_max_iter,
        ..RecallConfig::for_k_base(k_base)
    };
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

/// Immutable ingested corpus.
#[pyclass(frozen, module = "docrag")]
struct Corpus {
    handle: Arc<CorpusHandle>,
}

#[pymethods]
impl Corpus {
    fn page_count(&self) -> usize {
        self.handle.page_count()
    }

    fn document_count(&self) -> usize {
        self.handle.document_count()
    }

    fn chunk_count(&self) -> usize {
        self.handle.chunk_count()
    }

    fn modalities(&self) -> Vec<String> {
        self.handle
            .modalities()
            .into_iter()
            .map(|m| m.to_string())
            .collect()
    }

    /// Page ids in canonical (document, page-number) order.
    fn page_ids(&self) -> Vec<String> {
        self.handle
            .pages()
            .iter()
            .map(|p| p.page_id.0.clone())
            .collect()
    }

    /// Deduplicates and sorts page ids into canonical order.
    fn canonical_order(&self, page_ids: Vec<String>) -> PyResult<Vec<String>> {
        self.handle
            .canonical_order(page_ids.into_iter().map(PageId))
            .map(|ids| ids.into_iter().map(|p| p.0).collect())
            .map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(pages={}, documents={}, chunks={})",
            self.handle.page_count(),
            self.handle.document_count(),
            self.handle.chunk_count()
        )
    }
}

/// Ingests a manifest into an index directory and returns the corpus.
#[pyfunction]
fn ingest_corpus(manifest_path: PathBuf, index_dir: PathBuf) -> PyResult<Corpus> {
    let handle = corpus::ingest_corpus(&manifest_path, &index_dir).map_err(value_error)?;
    Ok(Corpus {
        handle: Arc::new(handle),
    })
}

/// Opens a previously ingested index directory.
#[pyfunction]
fn open_corpus(index_dir: PathBuf) -> PyResult<Corpus> {
    let handle = corpus::open_corpus(&index_dir).map_err(value_error)?;
    Ok(Corpus {
        handle: Arc::new(handle),
    })
}

/// Cosine similarity of two equal-length vectors.
#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    similarity::cosine(&a, &b).map_err(value_error)
}

/// Fits the two-component mixture; returns the fit as a dict.
#[pyfunction]
#[pyo3(signature = (scores, em_tol = 1e-6, em_max_iter = 200))]
fn fit_gmm(py: Python<'_>, scores: Vec<f64>, em_tol: f64, em_max_iter: u32) -> PyResult<PyObject> {
    let cfg = recall_config(10, em_tol, em_max_iter)?;
    let fit = gmm::fit_gmm(&scores, &cfg).map_err(value_error)?;
    Ok(serialize_to_py(py, &fit))
}

/// Adaptive cutoff over a descending-sorted score list: the chosen K, the
/// fallback flag and the mixture fit (when one was used).
#[pyfunction]
#[pyo3(signature = (scores, k_base = 10))]
fn adaptive_cutoff(py: Python<'_>, scores: Vec<f64>, k_base: usize) -> PyResult<PyObject> {
    let cfg = recall_config(k_base, 1e-6, 200)?;
    let mut indexed: Vec<(PageId, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (PageId(format!("s#{i}")), s))
        .collect();
    indexed.sort_by(|a, b| b.1.total_cmp(&a.1));
    let sv = ScoreVector {
        modality: Modality::Visual,
        scores: indexed,
    };
    let recall = gmm::adaptive_recall(&sv, &cfg).map_err(value_error)?;
    let dict = PyDict::new_bound(py);
    dict.set_item("k", recall.k_used)?;
    dict.set_item("fallback", recall.fallback)?;
    dict.set_item("gmm", serialize_to_py(py, &recall.gmm))?;
    Ok(dict.into_py(py))
}

/// Runs retrieval for one query. `query_vecs` maps modality name
/// ("visual"/"textual") to the query vector.
#[pyfunction]
#[pyo3(signature = (corpus, query_id, query_vecs, mode = "dynamic-hybrid", k_base = 10))]
fn retrieve(
    py: Python<'_>,
    corpus: &Corpus,
    query_id: &str,
    query_vecs: BTreeMap<String, Vec<f64>>,
    mode: &str,
    k_base: usize,
) -> PyResult<PyObject> {
    let mode: RetrievalMode = mode.parse().map_err(value_error)?;
    let cfg = recall_config(k_base, 1e-6, 200)?;
    let vecs = parse_modality_vecs(query_vecs)?;
    let result =
        retrieval::retrieve(query_id, &vecs, &corpus.handle, &cfg, mode).map_err(value_error)?;
    Ok(serialize_to_py(py, &result))
}

/// Recall@K for a retrieved ranking against golden pages.
#[pyfunction]
fn recall_at_k(retrieved: Vec<String>, golden: Vec<String>, k: usize) -> PyResult<f64> {
    let retrieved: Vec<PageId> = retrieved.into_iter().map(PageId).collect();
    let golden = golden.into_iter().map(PageId).collect();
    eval::recall_at_k(&retrieved, &golden, k).map_err(value_error)
}

/// Reciprocal rank of the first golden page within the top K.
#[pyfunction]
fn mrr_at_k(retrieved: Vec<String>, golden: Vec<String>, k: usize) -> PyResult<f64> {
    let retrieved: Vec<PageId> = retrieved.into_iter().map(PageId).collect();
    let golden = golden.into_iter().map(PageId).collect();
    eval::mrr_at_k(&retrieved, &golden, k).map_err(value_error)
}

/// Parses an agent reply. `expected` lists allowed shapes:
/// "seeker_choice", "inspector_answer", "inspector_feedback", "final_answer".
#[pyfunction]
fn parse_agent_json(py: Python<'_>, raw: &str, expected: Vec<String>) -> PyResult<PyObject> {
    let expected: Vec<AgentMessageKind> = expected
        .iter()
        .map(|name| {
            serde_json::from_value(serde_json::Value::String(name.clone()))
                .map_err(|_| value_error(format!("unknown message kind `{name}`")))
        })
        .collect::<PyResult<_>>()?;
    let message = docrag_core::gateway::parse_agent_json(raw, &expected).map_err(value_error)?;
    Ok(serialize_to_py(py, &message))
}

/// Runs the full seeker/inspector/answer workflow against a scripted
/// transcript file; fully offline.
#[pyfunction]
#[pyo3(signature = (corpus, query_id, query_text, query_vecs, transcript_path, mode = "dynamic-hybrid", k_base = 10, max_rounds = 5))]
#[allow(clippy::too_many_arguments)]
fn run_scripted_ask(
    py: Python<'_>,
    corpus: &Corpus,
    query_id: &str,
    query_text: &str,
    query_vecs: BTreeMap<String, Vec<f64>>,
    transcript_path: PathBuf,
    mode: &str,
    k_base: usize,
    max_rounds: u32,
) -> PyResult<PyObject> {
    let mode: RetrievalMode = mode.parse().map_err(value_error)?;
    let cfg = recall_config(k_base, 1e-6, 200)?;
    let vecs = parse_modality_vecs(query_vecs)?;
    let result: RetrievalResult =
        retrieval::retrieve(query_id, &vecs, &corpus.handle, &cfg, mode).map_err(value_error)?;
    let session = ScriptedSession::from_jsonl(Path::new(&transcript_path)).map_err(value_error)?;
    let gateway = Gateway::scripted(Arc::new(session));
    let limits = WorkflowLimits {
        max_rounds,
        ..WorkflowLimits::default()
    };
    let outcome = workflow::run_workflow(query_id, query_text, &result, &gateway, &limits)
        .map_err(value_error)?;
    let dict = PyDict::new_bound(py);
    dict.set_item("answer", &outcome.answer)?;
    dict.set_item(
        "reference",
        outcome
            .reference
            .iter()
            .map(|p| p.0.clone())
            .collect::<Vec<_>>(),
    )?;
    dict.set_item("rounds", outcome.rounds)?;
    dict.set_item("termination", serialize_to_py(py, &outcome.termination))?;
    dict.set_item("best_effort", outcome.best_effort)?;
    dict.set_item(
        "retrieved",
        result
            .merged
            .iter()
            .map(|p| p.0.clone())
            .collect::<Vec<_>>(),
    )?;
    dict.set_item(
        "pages_inspected",
        outcome
            .pages_inspected
            .iter()
            .map(|p| p.0.clone())
            .collect::<Vec<_>>(),
    )?;
    Ok(dict.into_py(py))
}

#[pymodule]
fn docrag(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_function(wrap_pyfunction!(ingest_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(open_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(parse_agent_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_scripted_ask, m)?)?;
    Ok(())
}
