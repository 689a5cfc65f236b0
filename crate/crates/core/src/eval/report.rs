//! Report assembly and serialization (JSON plus a flat CSV).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Modality;

use super::ablation::{CellReport, PhaseTimings, QueryEval};
use super::EvalError;

/// Per-cell aggregates: arithmetic means over per-query rows, summed in
/// uid order so the numbers are bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub judged: usize,
    pub mean_recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    /// Correct answers over judged answers; 0 when nothing was judged.
    pub accuracy: f64,
    /// Mean pages sent to generation ("Avg. Pages").
    pub mean_pages: f64,
    /// Adaptive-recall fallbacks over adaptive recalls; 0 when none ran.
    pub gmm_fallback_rate: f64,
    pub mean_wall_ms: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryEval>,
    pub aggregates: Aggregates,
}

pub(super) fn aggregate(rows: &[QueryEval]) -> Aggregates {
    let n = rows.len();
    let nf = n as f64;
    let mean = |f: &dyn Fn(&QueryEval) -> f64| -> f64 {
        if n == 0 {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / nf
        }
    };
    let mut mean_recall_at = BTreeMap::new();
    if let Some(first) = rows.first() {
        for &k in first.recall_at.keys() {
            mean_recall_at.insert(k, mean(&|r: &QueryEval| r.recall_at[&k]));
        }
    }
    let judged = rows.iter().filter(|r| r.judge_score.is_some()).count();
    let correct = rows.iter().filter(|r| r.correct == Some(true)).count();
    let adaptive: usize = rows.iter().map(|r| r.gmm_fallback.len()).sum();
    let fallbacks: usize = rows
        .iter()
        .map(|r| r.gmm_fallback.values().filter(|f| **f).count())
        .sum();
    Aggregates {
        queries: n,
        judged,
        mean_recall_at,
        mrr: mean(&|r: &QueryEval| r.reciprocal_rank),
        accuracy: if judged == 0 {
            0.0
        } else {
            correct as f64 / judged as f64
        },
        mean_pages: mean(&|r: &QueryEval| r.pages_sent as f64),
        gmm_fallback_rate: if adaptive == 0 {
            0.0
        } else {
            fallbacks as f64 / adaptive as f64
        },
        mean_wall_ms: PhaseTimings {
            retrieval_ms: mean(&|r: &QueryEval| r.wall_ms.retrieval_ms),
            generation_ms: mean(&|r: &QueryEval| r.wall_ms.generation_ms),
            judge_ms: mean(&|r: &QueryEval| r.wall_ms.judge_ms),
        },
    }
}

/// Writes `report.json` and the flat `report.csv` (one row per query per
/// cell) into `out_dir`.
pub fn write_reports(reports: &[CellReport], out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir).map_err(|e| EvalError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let json_path = out_dir.join("report.json");
    let mut json = serde_json::to_vec_pretty(reports).expect("report serializes");
    json.push(b'\n');
    fs::write(&json_path, json).map_err(|e| EvalError::Io {
        path: json_path.clone(),
        source: e,
    })?;

    let csv_path = out_dir.join("report.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| EvalError::Io {
        path: csv_path.clone(),
        source: std::io::Error::other(e),
    })?;
    let recall_ks: Vec<usize> = reports
        .first()
        .and_then(|c| c.report.per_query.first())
        .map(|row| row.recall_at.keys().copied().collect())
        .unwrap_or_else(|| vec![1, 3, 5]);
    let mut header = vec![
        "retrieval_mode".to_string(),
        "generation_mode".to_string(),
        "uid".to_string(),
        "retrieved".to_string(),
        "golden".to_string(),
    ];
    header.extend(recall_ks.iter().map(|k| format!("recall@{k}")));
    header.extend(
        [
            "reciprocal_rank",
            "k_visual",
            "k_textual",
            "pages_sent",
            "rounds",
            "termination",
            "answer",
            "judge_score",
            "correct",
            "retrieval_ms",
            "generation_ms",
            "judge_ms",
        ]
        .map(String::from),
    );
    let io_err = |e: csv::Error| EvalError::Io {
        path: csv_path.clone(),
        source: std::io::Error::other(e),
    };
    writer.write_record(&header).map_err(io_err)?;
    for cell in reports {
        for row in &cell.report.per_query {
            let mut record = vec![
                cell.retrieval_mode.to_string(),
                cell.generation_mode.to_string(),
                row.uid.clone(),
                join_ids(&row.retrieved),
                join_ids(&row.golden),
            ];
            record.extend(recall_ks.iter().map(|k| {
                row.recall_at
                    .get(k)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            }));
            record.push(row.reciprocal_rank.to_string());
            record.push(k_column(row, Modality::Visual));
            record.push(k_column(row, Modality::Textual));
            record.push(row.pages_sent.to_string());
            record.push(row.rounds.to_string());
            record.push(
                row.termination
                    .map(|t| {
                        serde_json::to_value(t)
                            .expect("termination serializes")
                            .as_str()
                            .unwrap_or_default()
                            .to_string()
                    })
                    .unwrap_or_default(),
            );
            record.push(row.answer.clone());
            record.push(row.judge_score.map(|s| s.to_string()).unwrap_or_default());
            record.push(row.correct.map(|c| c.to_string()).unwrap_or_default());
            record.push(format!("{:.3}", row.wall_ms.retrieval_ms));
            record.push(format!("{:.3}", row.wall_ms.generation_ms));
            record.push(format!("{:.3}", row.wall_ms.judge_ms));
            writer.write_record(&record).map_err(io_err)?;
        }
    }
    writer.flush().map_err(|e| EvalError::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    Ok(())
}

fn join_ids(ids: &[crate::corpus::PageId]) -> String {
    ids.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("|")
}

fn k_column(row: &QueryEval, modality: Modality) -> String {
    row.k_used
        .get(&modality)
        .map(|k| k.to_string())
        .unwrap_or_default()
}
