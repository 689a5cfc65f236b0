//! Retrieval metrics.

use std::collections::BTreeSet;

use crate::corpus::PageId;

use super::EvalError;

/// Fraction of golden pages present in the first `k` retrieved pages.
pub fn recall_at_k(
    retrieved: &[PageId],
    golden: &BTreeSet<PageId>,
    k: usize,
) -> Result<f64, EvalError> {
    if golden.is_empty() {
        return Err(EvalError::EmptyGolden);
    }
    let window = &retrieved[..k.min(retrieved.len())];
    let hits = golden.iter().filter(|g| window.contains(g)).count();
    Ok(hits as f64 / golden.len() as f64)
}

/// Reciprocal rank of the first golden page within the top `k`; 0 if none.
pub fn mrr_at_k(
    retrieved: &[PageId],
    golden: &BTreeSet<PageId>,
    k: usize,
) -> Result<f64, EvalError> {
    if golden.is_empty() {
        return Err(EvalError::EmptyGolden);
    }
    let window = &retrieved[..k.min(retrieved.len())];
    Ok(window
        .iter()
        .position(|p| golden.contains(p))
        .map_or(0.0, |rank| 1.0 / (rank + 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<PageId> {
        names.iter().map(|n| PageId::from(*n)).collect()
    }

    fn golden(names: &[&str]) -> BTreeSet<PageId> {
        names.iter().map(|n| PageId::from(*n)).collect()
    }

    #[test]
    fn recall_direct_hit() {
        let r = ids(&["p10", "p4", "p9"]);
        assert_eq!(recall_at_k(&r, &golden(&["p10"]), 1).unwrap(), 1.0);
    }

    #[test]
    fn recall_partial() {
        let r = ids(&["p8", "p1", "p3"]);
        assert_eq!(recall_at_k(&r, &golden(&["p2", "p8"]), 3).unwrap(), 0.5);
    }

    #[test]
    fn recall_empty_golden_errors() {
        let r = ids(&["p1"]);
        assert!(matches!(
            recall_at_k(&r, &BTreeSet::new(), 1),
            Err(EvalError::EmptyGolden)
        ));
        assert!(matches!(
            mrr_at_k(&r, &BTreeSet::new(), 1),
            Err(EvalError::EmptyGolden)
        ));
    }

    #[test]
    fn mrr_cases() {
        let r = ids(&["p1", "p2", "p3", "p4", "p5"]);
        assert_eq!(mrr_at_k(&r, &golden(&["p1"]), 5).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&r, &golden(&["p4"]), 5).unwrap(), 0.25);
        assert_eq!(mrr_at_k(&r, &golden(&["p9"]), 5).unwrap(), 0.0);
        // Golden at rank 4 is outside the top 3.
        assert_eq!(mrr_at_k(&r, &golden(&["p4"]), 3).unwrap(), 0.0);
    }

    #[test]
    fn matches_brute_force_oracles_on_random_instances() {
        // Deterministic xorshift instance generator.
        let mut seed = 0x9E3779B97F4A7C15u64;
        let mut next = move |bound: usize| {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed as usize) % bound
        };
        for _ in 0..200 {
            let n = 3 + next(20);
            let retrieved: Vec<PageId> = (0..n)
                .map(|i| PageId::from(format!("p{i}").as_str()))
                .collect();
            let golden: BTreeSet<PageId> = (0..1 + next(4))
                .map(|_| PageId::from(format!("p{}", next(25)).as_str()))
                .collect();
            let k = 1 + next(n + 3);

            // Brute-force set-intersection oracle.
            let mut inter = 0;
            for g in &golden {
                for r in retrieved.iter().take(k) {
                    if r == g {
                        inter += 1;
                        break;
                    }
                }
            }
            let want_recall = inter as f64 / golden.len() as f64;
            assert_eq!(recall_at_k(&retrieved, &golden, k).unwrap(), want_recall);

            // Brute-force first-hit oracle.
            let mut want_rr = 0.0;
            for (i, r) in retrieved.iter().take(k).enumerate() {
                if golden.contains(r) {
                    want_rr = 1.0 / (i + 1) as f64;
                    break;
                }
            }
            assert_eq!(mrr_at_k(&retrieved, &golden, k).unwrap(), want_rr);

            // Recall is non-decreasing in k.
            let mut prev = 0.0;
            for kk in 1..=n {
                let r = recall_at_k(&retrieved, &golden, kk).unwrap();
                assert!(r >= prev);
                prev = r;
            }

            // |golden| = 1 biconditional: mrr > 0 <=> recall = 1.
            if golden.len() == 1 {
                let rec = recall_at_k(&retrieved, &golden, k).unwrap();
                let rr = mrr_at_k(&retrieved, &golden, k).unwrap();
                assert_eq!(rr > 0.0, rec == 1.0);
            }
        }
    }
}
