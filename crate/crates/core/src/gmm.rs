//! Adaptive retrieval cutoff from a two-component Gaussian mixture.
//!
//! Similarity scores for a query split into a high cluster (pages worth
//! reading) and a low cluster (everything else). A 1-D two-component
//! mixture is fitted with EM over the top of the score vector, the cutoff K
//! is the number of pages the high component claims, and K is clamped to a
//! configured band to absorb outlier fits.

use serde::{Deserialize, Serialize};

use crate::similarity::{top_k, ScoreVector};

/// Fitted two-component mixture. The `t` component is the high-similarity
/// one (`mu_t >= mu_f` after relabeling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub w_f: f64,
    pub w_t: f64,
    pub mu_f: f64,
    pub mu_t: f64,
    pub var_f: f64,
    pub var_t: f64,
    pub log_likelihood: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Tuning for adaptive recall. Defaults: base K of 10, mixture fitted on
/// the top 2·K scores, K clamped to [K/2, K].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallConfig {
    pub k_base: usize,
    pub fit_pool: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub em_tol: f64,
    pub em_max_iter: u32,
    pub variance_floor: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        RecallConfig::for_k_base(10)
    }
}

impl RecallConfig {
    /// Derives the pool and clamp band from a base K.
    pub fn for_k_base(k_base: usize) -> Self {
        RecallConfig {
            k_base,
            fit_pool: 2 * k_base,
            k_min: (k_base / 2).max(1),
            k_max: k_base,
            em_tol: 1e-6,
            em_max_iter: 200,
            variance_floor: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if self.k_base < 1 {
            return Err(GmmError::InvalidConfig("k_base must be >= 1".into()));
        }
        if self.k_min < 1 || self.k_min > self.k_max || self.k_max > self.fit_pool {
            return Err(GmmError::InvalidConfig(format!(
                "need 1 <= k_min <= k_max <= fit_pool, got k_min={} k_max={} fit_pool={}",
                self.k_min, self.k_max, self.fit_pool
            )));
        }
        if self.em_max_iter == 0 {
            return Err(GmmError::InvalidConfig("em_max_iter must be >= 1".into()));
        }
        if !(self.em_tol.is_finite() && self.em_tol > 0.0) {
            return Err(GmmError::InvalidConfig("em_tol must be positive".into()));
        }
        if !(self.variance_floor.is_finite() && self.variance_floor > 0.0) {
            return Err(GmmError::InvalidConfig(
                "variance_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GmmError {
    #[error("degenerate input: all scores equal within 1e-12")]
    DegenerateInput,
    #[error("non-finite score in input")]
    NonFinite,
    #[error("need at least 4 scores to fit, got {0}")]
    InsufficientData(usize),
    #[error("corpus has no pages")]
    EmptyCorpus,
    #[error("invalid recall config: {0}")]
    InvalidConfig(String),
}

/// Mixture parameters plus the log-likelihood those parameters achieved,
/// recorded once per EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmIteration {
    pub w_f: f64,
    pub w_t: f64,
    pub mu_f: f64,
    pub mu_t: f64,
    pub var_f: f64,
    pub var_t: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy)]
struct Params {
    w: [f64; 2],
    mu: [f64; 2],
    var: [f64; 2],
}

fn log_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Log-space E-step: per-point responsibility of the second component plus
/// the total log-likelihood of the current parameters.
fn e_step(params: &Params, scores: &[f64]) -> (Vec<f64>, f64) {
    let mut resp = Vec::with_capacity(scores.len());
    let mut ll = 0.0;
    for &s in scores {
        let la = log_weighted(params.w[0], s, params.mu[0], params.var[0]);
        let lb = log_weighted(params.w[1], s, params.mu[1], params.var[1]);
        let m = la.max(lb);
        let lse = m + ((la - m).exp() + (lb - m).exp()).ln();
        resp.push((lb - lse).exp());
        ll += lse;
    }
    (resp, ll)
}

fn log_weighted(w: f64, x: f64, mu: f64, var: f64) -> f64 {
    if w <= 0.0 {
        f64::NEG_INFINITY
    } else {
        w.ln() + log_normal_pdf(x, mu, var)
    }
}

fn m_step(params: &mut Params, resp: &[f64], scores: &[f64], floor: f64) {
    let n = scores.len() as f64;
    let n_t: f64 = resp.iter().sum();
    let n_f = n - n_t;
    for (idx, nk) in [(0usize, n_f), (1usize, n_t)] {
        if nk < 1e-12 {
            // Component died; keep its location, zero its weight.
            params.w[idx] = 0.0;
            continue;
        }
        let r = |i: usize| if idx == 1 { resp[i] } else { 1.0 - resp[i] };
        let mu = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| r(i) * s)
            .sum::<f64>()
            / nk;
        let var = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| r(i) * (s - mu) * (s - mu))
            .sum::<f64>()
            / nk;
        params.w[idx] = nk / n;
        params.mu[idx] = mu;
        params.var[idx] = var.max(floor);
    }
    // Keep the weights summing to exactly 1.
    params.w[0] = 1.0 - params.w[1];
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Fits a two-component 1-D Gaussian mixture with EM.
pub fn fit_gmm(scores: &[f64], cfg: &RecallConfig) -> Result<GmmFit, GmmError> {
    fit_gmm_traced(scores, cfg).map(|(fit, _)| fit)
}

/// [`fit_gmm`] plus the per-iteration parameter/log-likelihood history, for
/// audits and monotonicity checks.
pub fn fit_gmm_traced(
    scores: &[f64],
    cfg: &RecallConfig,
) -> Result<(GmmFit, Vec<EmIteration>), GmmError> {
    cfg.validate()?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(GmmError::NonFinite);
    }
    if scores.len() < 4 {
        return Err(GmmError::InsufficientData(scores.len()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[sorted.len() - 1] - sorted[0] <= 1e-12 {
        return Err(GmmError::DegenerateInput);
    }

    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sample_var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let mut params = Params {
        w: [0.5, 0.5],
        mu: [percentile(&sorted, 0.25), percentile(&sorted, 0.75)],
        var: [(sample_var / 4.0).max(cfg.variance_floor); 2],
    };

    let mut history = Vec::new();
    let mut ll_prev = f64::NEG_INFINITY;
    let mut iterations: u32 = 0;
    let mut converged = false;
    let final_ll = loop {
        let (resp, ll) = e_step(&params, scores);
        debug_assert!(
            ll >= ll_prev - 1e-9,
            "EM log-likelihood decreased: {ll_prev} -> {ll}"
        );
        history.push(EmIteration {
            w_f: params.w[0],
            w_t: params.w[1],
            mu_f: params.mu[0],
            mu_t: params.mu[1],
            var_f: params.var[0],
            var_t: params.var[1],
            log_likelihood: ll,
        });
        if iterations > 0 && ll - ll_prev < cfg.em_tol {
            converged = true;
            break ll;
        }
        if iterations >= cfg.em_max_iter {
            break ll;
        }
        m_step(&mut params, &resp, scores, cfg.variance_floor);
        iterations += 1;
        ll_prev = ll;
    };

    // Relabel so `t` is the high-similarity component.
    if params.mu[1] < params.mu[0] {
        params.w.swap(0, 1);
        params.mu.swap(0, 1);
        params.var.swap(0, 1);
    }
    Ok((
        GmmFit {
            w_f: params.w[0],
            w_t: params.w[1],
            mu_f: params.mu[0],
            mu_t: params.mu[1],
            var_f: params.var[0],
            var_t: params.var[1],
            log_likelihood: final_ll,
            iterations,
            converged,
        },
        history,
    ))
}

/// Posterior probability that a score belongs to the high component.
pub fn responsibility_high(fit: &GmmFit, score: f64) -> f64 {
    let la = log_weighted(fit.w_f, score, fit.mu_f, fit.var_f);
    let lb = log_weighted(fit.w_t, score, fit.mu_t, fit.var_t);
    let m = la.max(lb);
    let lse = m + ((la - m).exp() + (lb - m).exp()).ln();
    (lb - lse).exp()
}

/// Number of fit-pool pages the high component claims (MAP assignment,
/// ties to the high side), clamped to `[k_min, k_max]`.
pub fn dynamic_k(fit: &GmmFit, sv: &ScoreVector, cfg: &RecallConfig) -> usize {
    let pool = &sv.scores[..cfg.fit_pool.min(sv.scores.len())];
    let raw = pool
        .iter()
        .filter(|(_, s)| responsibility_high(fit, *s) >= 0.5)
        .count();
    raw.clamp(cfg.k_min, cfg.k_max)
}

/// One modality's adaptive-recall outcome: the chosen prefix of the score
/// vector plus the fit (or fallback marker) that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityRecall {
    pub k_used: usize,
    pub hits: Vec<(crate::corpus::PageId, f64)>,
    pub gmm: Option<GmmFit>,
    pub fallback: bool,
}

/// Full adaptive recall for one modality: fit on the top `fit_pool` scores,
/// cut at the dynamic K. Degenerate or non-converged fits fall back to the
/// static `k_base`.
pub fn adaptive_recall(sv: &ScoreVector, cfg: &RecallConfig) -> Result<ModalityRecall, GmmError> {
    cfg.validate()?;
    if sv.scores.is_empty() {
        return Err(GmmError::EmptyCorpus);
    }
    let pool: Vec<f64> = sv
        .scores
        .iter()
        .take(cfg.fit_pool)
        .map(|(_, s)| *s)
        .collect();
    match fit_gmm(&pool, cfg) {
        Ok(fit) if fit.converged => {
            let k = dynamic_k(&fit, sv, cfg);
            let hits = top_k(sv, k);
            Ok(ModalityRecall {
                k_used: hits.len(),
                hits,
                gmm: Some(fit),
                fallback: false,
            })
        }
        Ok(fit) => {
            let hits = top_k(sv, cfg.k_base);
            Ok(ModalityRecall {
                k_used: hits.len(),
                hits,
                gmm: Some(fit),
                fallback: true,
            })
        }
        Err(GmmError::DegenerateInput) | Err(GmmError::InsufficientData(_)) => {
            let hits = top_k(sv, cfg.k_base);
            Ok(ModalityRecall {
                k_used: hits.len(),
                hits,
                gmm: None,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
