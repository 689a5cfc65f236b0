//! Query–page similarity scoring.
//!
//! One score per page per modality. Visual pages are scored directly
//! against their page embedding; textual pages take the maximum over their
//! OCR-chunk scores. All dot products run in a fixed sequential order so
//! scores are bit-reproducible across runs.

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, CorpusHandle, EmbeddingTable, Modality, PageId};

#[derive(Debug, thiserror::Error)]
pub enum SimilarityError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero vector cannot be scored")]
    ZeroVector,
    #[error("query vector has length {got}, {modality} table has dimension {expected}")]
    DimensionMismatch {
        modality: Modality,
        expected: usize,
        got: usize,
    },
    #[error("corpus has no pages")]
    EmptyCorpus,
}

/// Scores for every page of one modality, sorted descending, ties broken by
/// canonical page order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub modality: Modality,
    pub scores: Vec<(PageId, f64)>,
}

impl ScoreVector {
    /// Sorts raw per-page scores into a well-formed score vector.
    pub fn from_scores(
        modality: Modality,
        mut scores: Vec<(PageId, f64)>,
        corpus: &CorpusHandle,
    ) -> Self {
        scores.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| {
                let ra = corpus.canonical_rank(&a.0).unwrap_or(usize::MAX);
                let rb = corpus.canonical_rank(&b.0).unwrap_or(usize::MAX);
                ra.cmp(&rb)
            })
        });
        ScoreVector { modality, scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Cosine similarity `dot(a,b) / (‖a‖‖b‖)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na < 1e-12 || nb < 1e-12 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores every page of the corpus against a query vector.
///
/// Pages without an embedding (or, textually, without any embedded chunk)
/// score -1.0 and rank last, so the output is always a permutation of the
/// full page list.
pub fn score_all(
    query_vec: &[f64],
    table: &EmbeddingTable,
    corpus: &CorpusHandle,
) -> Result<ScoreVector, SimilarityError> {
    if corpus.page_count() == 0 {
        return Err(SimilarityError::EmptyCorpus);
    }
    if query_vec.len() != table.dimension {
        return Err(SimilarityError::DimensionMismatch {
            modality: table.modality,
            expected: table.dimension,
            got: query_vec.len(),
        });
    }
    let query = normalize(query_vec).ok_or(SimilarityError::ZeroVector)?;

    let mut scores = Vec::with_capacity(corpus.page_count());
    for page in corpus.pages() {
        let score = match table.modality {
            Modality::Visual => table
                .get(page.page_id.as_str())
                .map(|v| clamp_unit(dot(&query, v))),
            Modality::Textual => page
                .ocr_chunks
                .iter()
                .filter_map(|c| table.get(&c.chunk_id.0))
                .map(|v| clamp_unit(dot(&query, v)))
                .fold(None, |acc: Option<f64>, s| {
                    Some(acc.map_or(s, |a| a.max(s)))
                }),
        };
        scores.push((page.page_id.clone(), score.unwrap_or(-1.0)));
    }
    Ok(ScoreVector::from_scores(table.modality, scores, corpus))
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// First `min(k, |sv|)` entries of a score vector.
pub fn top_k(sv: &ScoreVector, k: usize) -> Vec<(PageId, f64)> {
    sv.scores[..k.min(sv.scores.len())].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::testutil::corpus_in_memory;

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn cosine_analytic_cases() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let got = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((got - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_rejects_bad_inputs() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(SimilarityError::LengthMismatch { .. })
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SimilarityError::ZeroVector)
        ));
    }

    #[test]
    fn orthonormal_visual_ranking() {
        let corpus = corpus_in_memory(
            &[("d", 3)],
            Some((
                3,
                vec![
                    ("d#1", unit(3, 0)),
                    ("d#2", unit(3, 1)),
                    ("d#3", unit(3, 2)),
                ],
            )),
            vec![],
            None,
        );
        let table = corpus.table(Modality::Visual).unwrap();
        let sv = score_all(&unit(3, 1), table, &corpus).unwrap();
        assert_eq!(sv.scores[0].0.as_str(), "d#2");
        assert!((sv.scores[0].1 - 1.0).abs() < 1e-12);
        // Ties at 0.0 fall back to canonical order.
        assert_eq!(sv.scores[1].0.as_str(), "d#1");
        assert_eq!(sv.scores[2].0.as_str(), "d#3");
        assert_eq!(top_k(&sv, 1)[0].0.as_str(), "d#2");
        assert_eq!(top_k(&sv, 10).len(), 3);
    }

    #[test]
    fn textual_aggregates_page_score_by_max_chunk() {
        // d#1 has chunks at cosine 0.2 and 0.9 against the query direction.
        let q = vec![1.0, 0.0];
        let c_low = vec![0.2, (1.0f64 - 0.04).sqrt()];
        let c_high = vec![0.9, (1.0f64 - 0.81).sqrt()];
        let corpus = corpus_in_memory(
            &[("d", 2)],
            None,
            vec![
                ("c1", "d#1", "low"),
                ("c2", "d#1", "high"),
                ("c3", "d#2", "mid"),
            ],
            Some((
                2,
                vec![
                    ("c1", c_low),
                    ("c2", c_high),
                    ("c3", vec![0.5, 0.86602540378]),
                ],
            )),
        );
        let table = corpus.table(Modality::Textual).unwrap();
        let sv = score_all(&q, table, &corpus).unwrap();
        assert_eq!(sv.scores[0].0.as_str(), "d#1");
        assert!((sv.scores[0].1 - 0.9).abs() < 1e-9);
    }

    #[test]
    fn pages_without_coverage_rank_last() {
        let corpus = corpus_in_memory(
            &[("d", 3)],
            Some((2, vec![("d#1", vec![1.0, 0.0]), ("d#2", vec![0.0, 1.0])])),
            vec![],
            None,
        );
        let table = corpus.table(Modality::Visual).unwrap();
        let sv = score_all(&[1.0, 0.0], table, &corpus).unwrap();
        assert_eq!(sv.scores.len(), 3);
        assert_eq!(sv.scores[2].0.as_str(), "d#3");
        assert_eq!(sv.scores[2].1, -1.0);
    }

    #[test]
    fn score_all_matches_brute_force_oracle() {
        // 50 pages, 64 dims, deterministic pseudo-random vectors.
        let dim = 64;
        let mut seed = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let vectors: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..dim).map(|_| next()).collect())
            .collect();
        let query: Vec<f64> = (0..dim).map(|_| next()).collect();

        let entries: Vec<(String, Vec<f64>)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("d#{}", i + 1), v.clone()))
            .collect();
        let corpus = corpus_in_memory(
            &[("d", 50)],
            Some((
                dim,
                entries
                    .iter()
                    .map(|(id, v)| (id.as_str(), v.clone()))
                    .collect(),
            )),
            vec![],
            None,
        );
        let table = corpus.table(Modality::Visual).unwrap();
        let sv = score_all(&query, table, &corpus).unwrap();

        // Independent oracle: plain double-loop cosine, then full sort.
        let mut oracle: Vec<(String, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let dot: f64 = query.iter().zip(v).map(|(a, b)| a * b).sum();
                let nq = query.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                (format!("d#{}", i + 1), dot / (nq * nv))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1));

        assert_eq!(sv.scores.len(), oracle.len());
        for ((got_id, got_s), (want_id, want_s)) in sv.scores.iter().zip(&oracle) {
            assert_eq!(got_id.as_str(), want_id);
            assert!((got_s - want_s).abs() < 1e-9);
        }
        // top_k(., 5) equals the oracle sort's first five.
        let top = top_k(&sv, 5);
        for (got, want) in top.iter().zip(&oracle[..5]) {
            assert_eq!(got.0.as_str(), want.0);
        }
    }

    #[test]
    fn output_is_permutation_of_pages() {
        let corpus = corpus_in_memory(
            &[("a", 4), ("b", 2)],
            Some((
                2,
                vec![
                    ("a#1", vec![1.0, 0.0]),
                    ("a#2", vec![0.6, 0.8]),
                    ("a#3", vec![0.0, 1.0]),
                    ("a#4", vec![-1.0, 0.0]),
                    ("b#1", vec![0.8, 0.6]),
                    ("b#2", vec![0.0, -1.0]),
                ],
            )),
            vec![],
            None,
        );
        let sv = score_all(
            &[0.7, 0.3],
            corpus.table(Modality::Visual).unwrap(),
            &corpus,
        )
        .unwrap();
        let mut ids: Vec<&str> = sv.scores.iter().map(|(id, _)| id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, vec!["a#1", "a#2", "a#3", "a#4", "b#1", "b#2"]);
    }

    #[test]
    fn ranking_invariant_under_uniform_rescaling() {
        // Normalization at ingest cancels any positive scale factor.
        let raw = [
            ("d#1", vec![0.3, 0.1]),
            ("d#2", vec![0.2, 0.9]),
            ("d#3", vec![0.8, 0.4]),
        ];
        let query = [0.6, 0.4];
        let rank = |scale: f64| -> Vec<String> {
            let scaled: Vec<(&str, Vec<f64>)> = raw
                .iter()
                .map(|(id, v)| (*id, v.iter().map(|x| x * scale).collect()))
                .collect();
            let corpus = corpus_in_memory(&[("d", 3)], Some((2, scaled)), vec![], None);
            score_all(&query, corpus.table(Modality::Visual).unwrap(), &corpus)
                .unwrap()
                .scores
                .into_iter()
                .map(|(id, _)| id.0)
                .collect()
        };
        let base = rank(1.0);
        for scale in [0.01, 3.7, 250.0] {
            assert_eq!(rank(scale), base, "scale {scale}");
        }
    }

    #[test]
    fn top_k_prefix_property() {
        let corpus = corpus_in_memory(
            &[("d", 4)],
            Some((
                2,
                vec![
                    ("d#1", vec![1.0, 0.0]),
                    ("d#2", vec![0.9, 0.43588989435]),
                    ("d#3", vec![0.0, 1.0]),
                    ("d#4", vec![0.5, 0.86602540378]),
                ],
            )),
            vec![],
            None,
        );
        let sv = score_all(
            &[1.0, 0.1],
            corpus.table(Modality::Visual).unwrap(),
            &corpus,
        )
        .unwrap();
        for k1 in 1..=4usize {
            for k2 in k1..=5usize {
                let a = top_k(&sv, k1);
                let b = top_k(&sv, k2);
                assert_eq!(a[..], b[..a.len()]);
            }
        }
    }
}
