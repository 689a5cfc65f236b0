//! Command implementations: thin compositions over the engine library.

use std::collections::HashMap;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use docrag_core::corpus::{
    ingest_corpus_with_outcome, load_dataset, open_corpus, CorpusHandle, IngestOutcome,
    QueryRecord, QueryVectorTable,
};
use docrag_core::eval::{run_ablation, write_reports, EvalOptions, GridCell};
use docrag_core::gmm::RecallConfig;
use docrag_core::retrieval::RetrievalMode;
use docrag_core::workflow::run_workflow;
use docrag_core::{BackendProfile, EngineConfig};

use crate::{AskArgs, EvalArgs, IngestArgs, RecallOverrides, RetrieveArgs};

/// Writes a line to stdout, exiting quietly when the pipe is gone
/// (e.g. output piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

impl RecallOverrides {
    fn apply(&self, base: &RecallConfig) -> Result<RecallConfig> {
        let mut cfg = match self.k_base {
            Some(k_base) => RecallConfig {
                em_tol: base.em_tol,
                em_max_iter: base.em_max_iter,
                variance_floor: base.variance_floor,
                ..RecallConfig::for_k_base(k_base)
            },
            None => base.clone(),
        };
        if let Some(k_min) = self.k_min {
            cfg.k_min = k_min;
        }
        if let Some(k_max) = self.k_max {
            cfg.k_max = k_max;
        }
        if let Some(em_tol) = self.em_tol {
            cfg.em_tol = em_tol;
        }
        if let Some(em_max_iter) = self.em_max_iter {
            cfg.em_max_iter = em_max_iter;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let index = match (&args.index, &args.config) {
        (Some(index), _) => index.clone(),
        (None, Some(config)) => EngineConfig::load(config)?.index_dir,
        (None, None) => bail!("pass --index or --config to locate the index directory"),
    };
    let (corpus, outcome) = ingest_corpus_with_outcome(&args.manifest, &index)
        .with_context(|| format!("ingest of {} failed", args.manifest.display()))?;
    let status = match outcome {
        IngestOutcome::Created => "created",
        IngestOutcome::Replaced => "replaced",
        IngestOutcome::Unchanged => "up to date",
    };
    out!(
        "index {status}: {} pages, {} documents, {} chunks, modalities [{}] at {}",
        corpus.page_count(),
        corpus.document_count(),
        corpus.chunk_count(),
        corpus
            .modalities()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        index.display()
    );
    Ok(())
}

struct Engine {
    config: EngineConfig,
    corpus: Arc<CorpusHandle>,
    dataset: Vec<QueryRecord>,
    vectors: QueryVectorTable,
}

impl Engine {
    fn open(config_path: &std::path::Path) -> Result<Self> {
        let config = EngineConfig::load(config_path)?;
        config.validate_runtime()?;
        let corpus = Arc::new(open_corpus(&config.index_dir)?);
        let dataset = match &config.dataset {
            Some(path) => load_dataset(path, &corpus)?,
            None => Vec::new(),
        };
        let vectors = QueryVectorTable::load(&config.query_embeddings)?;
        Ok(Engine {
            config,
            corpus,
            dataset,
            vectors,
        })
    }

    fn query(&self, uid: &str) -> Result<&QueryRecord> {
        self.dataset
            .iter()
            .find(|q| q.uid == uid)
            .ok_or_else(|| anyhow!("unknown query uid `{uid}`"))
    }
}

pub fn retrieve(args: RetrieveArgs) -> Result<()> {
    let engine = Engine::open(&args.config)?;
    let mode: RetrievalMode = args.mode.parse().map_err(|e: String| anyhow!(e))?;
    let recall = args.recall.apply(&engine.config.recall)?;
    let vecs = engine.vectors.vectors_for(&args.query_id);
    if vecs.is_empty() {
        bail!(
            "no query vectors found for `{}` in the configured sidecars",
            args.query_id
        );
    }
    let result =
        docrag_core::retrieval::retrieve(&args.query_id, &vecs, &engine.corpus, &recall, mode)?;
    out!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

pub fn ask(args: AskArgs) -> Result<()> {
    let engine = Engine::open(&args.config)?;
    let mode: RetrievalMode = args.mode.parse().map_err(|e: String| anyhow!(e))?;
    let recall = args.recall.apply(&engine.config.recall)?;

    let (query_id, query_text, query_vecs) = match (&args.uid, &args.query) {
        (Some(uid), None) => {
            let record = engine.query(uid)?;
            let vecs = engine.vectors.vectors_for(uid);
            if vecs.is_empty() {
                bail!("no query vectors found for `{uid}` in the configured sidecars");
            }
            (uid.clone(), record.query.clone(), vecs)
        }
        (None, Some(text)) => {
            let vecs = engine.config.embed_query(text)?;
            ("adhoc".to_string(), text.clone(), vecs)
        }
        _ => bail!("pass exactly one of --uid or --query"),
    };

    let retrieval =
        docrag_core::retrieval::retrieve(&query_id, &query_vecs, &engine.corpus, &recall, mode)?;
    let gateway =
        engine
            .config
            .ask_gateway(&engine.corpus, &query_id, args.transcript.as_deref())?;
    let limits = engine
        .config
        .limits_for(&engine.config.default_generation)?;
    let result = run_workflow(&query_id, &query_text, &retrieval, &gateway, &limits)?;

    if let Some(path) = &args.trace {
        result.trace.write_jsonl(path)?;
    }
    out!("answer: {}", result.answer);
    out!(
        "reference: {}",
        result
            .reference
            .iter()
            .map(|p| p.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    out!("rounds: {}", result.rounds);
    out!(
        "termination: {}",
        serde_json::to_value(result.termination)?
            .as_str()
            .unwrap_or_default()
    );
    if result.best_effort {
        out!("best-effort: true");
    }
    if let Some(reason) = &result.abort_reason {
        bail!("workflow aborted: {reason}");
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let engine = Engine::open(&args.config)?;
    let recall = args.recall.apply(&engine.config.recall)?;
    let dataset = match &args.dataset {
        Some(path) => load_dataset(path, &engine.corpus)?,
        None if !engine.dataset.is_empty() => engine.dataset.clone(),
        None => bail!("no dataset: pass --dataset or set `dataset` in the config"),
    };
    let grid: Vec<GridCell> = if args.grid.is_empty() {
        GridCell::full_grid()
    } else {
        args.grid
            .iter()
            .map(|s| s.parse().map_err(|e: String| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    let backend = engine.config.eval_backend(&engine.corpus)?;
    let concurrency = match engine.config.profile(&engine.config.default_generation)? {
        BackendProfile::Http { concurrency, .. } => *concurrency,
        BackendProfile::Scripted { .. } => 4,
    };
    let options = EvalOptions {
        recall,
        limits: engine
            .config
            .limits_for(&engine.config.default_generation)?,
        concurrency,
        record_timings: !args.no_timings,
        ..EvalOptions::default()
    };
    let reports = run_ablation(
        &dataset,
        &engine.corpus,
        &engine.vectors,
        &grid,
        &backend,
        &options,
    )?;
    write_reports(&reports, &args.out)?;
    for cell in &reports {
        let agg = &cell.report.aggregates;
        out!(
            "{},{}: accuracy {:.3} ({} judged), mrr@{} {:.3}, mean pages {:.2}",
            cell.retrieval_mode,
            cell.generation_mode,
            agg.accuracy,
            agg.judged,
            options.mrr_k,
            agg.mrr,
            agg.mean_pages,
        );
    }
    out!("reports written to {}", args.out.display());
    Ok(())
}

/// Shared lookup table for service handlers.
pub struct ServiceState {
    pub config: EngineConfig,
    pub corpus: Arc<CorpusHandle>,
    pub queries: HashMap<String, QueryRecord>,
    pub vectors: QueryVectorTable,
}

impl ServiceState {
    pub fn load(config_path: &std::path::Path) -> Result<Self> {
        let engine = Engine::open(config_path)?;
        let queries = engine
            .dataset
            .iter()
            .cloned()
            .map(|q| (q.uid.clone(), q))
            .collect();
        Ok(ServiceState {
            config: engine.config,
            corpus: engine.corpus,
            queries,
            vectors: engine.vectors,
        })
    }
}
