//! Ablation grid runner.
//!
//! Each grid cell pairs a retrieval mode with a generation mode. Retrieval
//! is computed once per (mode, query) and shared across cells; generation
//! and judging run per cell, concurrently across queries, with rows
//! reassembled in uid order so reports are deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, Modality, PageId, QueryRecord, QueryVectorTable};
use crate::gateway::{parse_agent_json, AgentMessage, AgentMessageKind, Gateway, TranscriptStore};
use crate::gmm::RecallConfig;
use crate::retrieval::{retrieve, RetrievalMode, RetrievalResult};
use crate::workflow::{corrective_turns, naive_request, run_workflow, Termination, WorkflowLimits};

use super::judge::judge_accuracy;
use super::metrics::{mrr_at_k, recall_at_k};
use super::report::{aggregate, EvalReport};
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// One model call over the whole retrieval context.
    Naive,
    /// The seeker/inspector/answer loop.
    MultiAgent,
}

impl GenerationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenerationMode::Naive => "naive",
            GenerationMode::MultiAgent => "multi-agent",
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(GenerationMode::Naive),
            "multi-agent" | "multi_agent" => Ok(GenerationMode::MultiAgent),
            other => Err(format!(
                "unknown generation mode `{other}` (expected naive or multi-agent)"
            )),
        }
    }
}

/// One ablation cell: retrieval mode × generation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub retrieval: RetrievalMode,
    pub generation: GenerationMode,
}

impl GridCell {
    /// The six rows of the standard ablation table plus the two remaining
    /// combinations.
    pub fn full_grid() -> Vec<GridCell> {
        let mut grid = Vec::new();
        for retrieval in RetrievalMode::ALL {
            for generation in [GenerationMode::Naive, GenerationMode::MultiAgent] {
                grid.push(GridCell {
                    retrieval,
                    generation,
                });
            }
        }
        grid
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.retrieval, self.generation)
    }
}

impl FromStr for GridCell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (retrieval, generation) = s
            .split_once(',')
            .ok_or_else(|| format!("grid cell `{s}` must be `<retrieval>,<generation>`"))?;
        Ok(GridCell {
            retrieval: retrieval.trim().parse()?,
            generation: generation.trim().parse()?,
        })
    }
}

/// Where generation and judging run.
pub enum EvalBackend {
    /// Transcript directory with one file per `<uid>.<generation_mode>`;
    /// the judge consumes the same session as generation.
    Scripted(TranscriptStore),
    /// Live gateways, shared across queries.
    Live { generation: Gateway, judge: Gateway },
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub recall: RecallConfig,
    pub limits: WorkflowLimits,
    /// Recall@K columns, default {1, 3, 5}.
    pub recall_ks: Vec<usize>,
    /// MRR window, default 5.
    pub mrr_k: usize,
    /// Worker threads per cell.
    pub concurrency: usize,
    /// Record wall-clock phase timings (disable for byte-stable reports).
    pub record_timings: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            recall: RecallConfig::default(),
            limits: WorkflowLimits::default(),
            recall_ks: vec![1, 3, 5],
            mrr_k: 5,
            concurrency: 4,
            record_timings: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub retrieval_ms: f64,
    pub generation_ms: f64,
    pub judge_ms: f64,
}

/// One query's evaluation row within one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub uid: String,
    pub retrieved: Vec<PageId>,
    pub golden: Vec<PageId>,
    pub recall_at: BTreeMap<usize, f64>,
    pub reciprocal_rank: f64,
    pub k_used: BTreeMap<Modality, usize>,
    pub gmm_fallback: BTreeMap<Modality, bool>,
    pub pages_sent: usize,
    pub rounds: u32,
    pub termination: Option<Termination>,
    pub answer: String,
    pub judge_score: Option<u8>,
    pub correct: Option<bool>,
    pub wall_ms: PhaseTimings,
}

/// One cell's full report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub retrieval_mode: RetrievalMode,
    pub generation_mode: GenerationMode,
    pub report: EvalReport,
}

/// Single-call generation over the merged context, with the same
/// corrective-retry contract as the agent loop.
fn naive_generate(
    uid: &str,
    query: &str,
    pages: &[PageId],
    gateway: &Gateway,
    limits: &WorkflowLimits,
) -> Result<(String, Vec<PageId>), EvalError> {
    let mut req = naive_request(query, pages);
    let mut attempt = 0;
    loop {
        let resp = gateway.chat(&req).map_err(|e| EvalError::Generation {
            uid: uid.to_string(),
            message: e.to_string(),
        })?;
        match parse_agent_json(&resp.text, &[AgentMessageKind::FinalAnswer]) {
            Ok(AgentMessage::FinalAnswer {
                answer, reference, ..
            }) => {
                let mapped = reference
                    .into_iter()
                    .filter_map(|idx| pages.get(idx).cloned())
                    .collect();
                return Ok((answer, mapped));
            }
            Ok(_) => unreachable!("parser returned the expected variant"),
            Err(err) if attempt < limits.parse_retries => {
                req.turns
                    .extend(corrective_turns(&resp.text, &err.to_string()));
                attempt += 1;
            }
            Err(err) => {
                return Err(EvalError::Generation {
                    uid: uid.to_string(),
                    message: format!("unparseable reply after {} attempt(s): {err}", attempt + 1),
                })
            }
        }
    }
}

struct CachedRetrieval {
    result: RetrievalResult,
    wall_ms: f64,
}

fn evaluate_query(
    query: &QueryRecord,
    cell: &GridCell,
    cached: &CachedRetrieval,
    backend: &EvalBackend,
    options: &EvalOptions,
) -> Result<QueryEval, EvalError> {
    let (generation_gw, judge_gw) = match backend {
        EvalBackend::Scripted(store) => {
            let session =
                Arc::new(store.open(&format!("{}.{}", query.uid, cell.generation.as_str()))?);
            let gw = Gateway::scripted(session);
            (gw.clone(), gw)
        }
        EvalBackend::Live { generation, judge } => (generation.clone(), judge.clone()),
    };

    let retrieval = &cached.result;
    let golden: std::collections::BTreeSet<PageId> =
        query.reference_page_ids.iter().cloned().collect();
    let mut recall_at = BTreeMap::new();
    for &k in &options.recall_ks {
        recall_at.insert(k, recall_at_k(&retrieval.merged, &golden, k)?);
    }
    let reciprocal_rank = mrr_at_k(&retrieval.merged, &golden, options.mrr_k)?;

    let gen_started = Instant::now();
    let (answer, pages_sent, rounds, termination) = match cell.generation {
        GenerationMode::Naive => {
            let (answer, _refs) = naive_generate(
                &query.uid,
                &query.query,
                &retrieval.merged,
                &generation_gw,
                &options.limits,
            )?;
            (answer, retrieval.merged.len(), 0, None)
        }
        GenerationMode::MultiAgent => {
            let result = run_workflow(
                &query.uid,
                &query.query,
                retrieval,
                &generation_gw,
                &options.limits,
            )
            .map_err(|e| EvalError::Generation {
                uid: query.uid.clone(),
                message: e.to_string(),
            })?;
            (
                result.answer,
                result.pages_inspected.len(),
                result.rounds,
                Some(result.termination),
            )
        }
    };
    let generation_ms = gen_started.elapsed().as_secs_f64() * 1e3;

    // Aborted workflows carry no answer worth grading.
    let judge_started = Instant::now();
    let verdict = if matches!(termination, Some(Termination::Aborted)) {
        None
    } else {
        Some(judge_accuracy(
            &answer,
            &query.reference_answer,
            &query.query,
            &judge_gw,
        )?)
    };
    let judge_ms = judge_started.elapsed().as_secs_f64() * 1e3;

    let wall_ms = if options.record_timings {
        PhaseTimings {
            retrieval_ms: cached.wall_ms,
            generation_ms,
            judge_ms,
        }
    } else {
        PhaseTimings::default()
    };

    Ok(QueryEval {
        uid: query.uid.clone(),
        retrieved: retrieval.merged.clone(),
        golden: query.reference_page_ids.clone(),
        recall_at,
        reciprocal_rank,
        k_used: retrieval
            .per_modality
            .iter()
            .map(|(&m, r)| (m, r.k_used))
            .collect(),
        gmm_fallback: retrieval
            .per_modality
            .iter()
            .map(|(&m, r)| (m, r.fallback))
            .collect(),
        pages_sent,
        rounds,
        termination,
        answer,
        judge_score: verdict.map(|v| v.score),
        correct: verdict.map(|v| v.correct),
        wall_ms,
    })
}

/// Runs every grid cell over the dataset and returns one report per cell.
pub fn run_ablation(
    dataset: &[QueryRecord],
    corpus: &CorpusHandle,
    query_vectors: &QueryVectorTable,
    grid: &[GridCell],
    backend: &EvalBackend,
    options: &EvalOptions,
) -> Result<Vec<CellReport>, EvalError> {
    let mut queries: Vec<&QueryRecord> = dataset.iter().collect();
    queries.sort_by(|a, b| a.uid.cmp(&b.uid));

    // Retrieval once per (mode, query), shared across cells.
    let modes: std::collections::BTreeSet<RetrievalMode> =
        grid.iter().map(|cell| cell.retrieval).collect();
    let mut retrieval_cache: BTreeMap<(RetrievalMode, &str), CachedRetrieval> = BTreeMap::new();
    for &mode in &modes {
        for query in &queries {
            let vecs = query_vectors.vectors_for(&query.uid);
            if vecs.is_empty() {
                return Err(EvalError::MissingQueryVectors(query.uid.clone()));
            }
            let started = Instant::now();
            let result = retrieve(&query.uid, &vecs, corpus, &options.recall, mode)?;
            let wall_ms = if options.record_timings {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            retrieval_cache.insert(
                (mode, query.uid.as_str()),
                CachedRetrieval { result, wall_ms },
            );
        }
    }

    let mut reports = Vec::with_capacity(grid.len());
    for cell in grid {
        let rows = run_cell(&queries, cell, &retrieval_cache, backend, options)?;
        let aggregates = aggregate(&rows);
        reports.push(CellReport {
            retrieval_mode: cell.retrieval,
            generation_mode: cell.generation,
            report: EvalReport {
                per_query: rows,
                aggregates,
            },
        });
    }
    Ok(reports)
}

fn run_cell(
    queries: &[&QueryRecord],
    cell: &GridCell,
    retrieval_cache: &BTreeMap<(RetrievalMode, &str), CachedRetrieval>,
    backend: &EvalBackend,
    options: &EvalOptions,
) -> Result<Vec<QueryEval>, EvalError> {
    let workers = options.concurrency.clamp(1, queries.len().max(1));
    let slots: Mutex<Vec<Option<Result<QueryEval, EvalError>>>> =
        Mutex::new((0..queries.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::SeqCst);
                if idx >= queries.len() {
                    return;
                }
                let query = queries[idx];
                let cached = &retrieval_cache[&(cell.retrieval, query.uid.as_str())];
                let row = evaluate_query(query, cell, cached, backend, options);
                slots.lock().unwrap()[idx] = Some(row);
            });
        }
    });

    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}
