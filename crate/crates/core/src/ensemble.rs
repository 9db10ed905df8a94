//! Minimum Bayes risk ranking over n-best lists from one or more systems:
//! pool the candidates, score each against the pool by expected
//! sentence-level BLEU (self-match included), and rank by expected utility.
//!
//! Pairwise utilities are computed from precomputed n-gram profiles; the
//! brute-force double loop that recounts n-grams per pair serves as the
//! reference in the test suite.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

use crate::hyp::NBestList;
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("invalid ensembling config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MbrMetric {
    #[default]
    BleuSentence,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum MbrWeighting {
    #[default]
    Uniform,
    /// softmax(model score / temperature) over the pool.
    ScoreSoftmax { temperature: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MbrConfig {
    pub metric: MbrMetric,
    pub weighting: MbrWeighting,
}

impl MbrConfig {
    fn validate(&self) -> Result<(), EnsembleError> {
        if let MbrWeighting::ScoreSoftmax { temperature } = self.weighting {
            if temperature <= 0.0 || !temperature.is_finite() {
                return Err(EnsembleError::Config(format!(
                    "softmax temperature must be positive, got {temperature}"
                )));
            }
        }
        Ok(())
    }
}

/// One pooled candidate with its expected utility.
#[derive(Clone, Debug, PartialEq)]
pub struct MbrCandidate<T> {
    pub tokens: Vec<T>,
    pub model_score: f64,
    pub utility: f64,
}

const MAX_ORDER: usize = 4;

struct NgramProfile<T> {
    counts: [HashMap<Vec<T>, usize>; MAX_ORDER],
    len: usize,
}

fn profile<T: Clone + Eq + Hash>(tokens: &[T]) -> NgramProfile<T> {
    let mut counts: [HashMap<Vec<T>, usize>; MAX_ORDER] = Default::default();
    for (n, map) in counts.iter_mut().enumerate() {
        let order = n + 1;
        if tokens.len() >= order {
            for w in tokens.windows(order) {
                *map.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }
    NgramProfile {
        counts,
        len: tokens.len(),
    }
}

/// Sentence BLEU with add-one smoothing on the n-gram precisions, orders up
/// to min(4, |h|), multiplicative brevity penalty. Returns a value in
/// [0, 1].
fn sentence_bleu<T: Clone + Eq + Hash>(h: &NgramProfile<T>, r: &NgramProfile<T>) -> f64 {
    if h.len == 0 && r.len == 0 {
        return 1.0;
    }
    if h.len == 0 || r.len == 0 {
        return 0.0;
    }
    let orders = h.len.min(MAX_ORDER);
    let mut log_prec_sum = 0.0;
    for n in 0..orders {
        let total: usize = h.counts[n].values().sum();
        let mut clipped = 0usize;
        for (gram, &count) in &h.counts[n] {
            let in_ref = r.counts[n].get(gram).copied().unwrap_or(0);
            clipped += count.min(in_ref);
        }
        log_prec_sum += ((clipped + 1) as f64 / (total + 1) as f64).ln();
    }
    let bp = (1.0 - r.len as f64 / h.len as f64).exp().min(1.0);
    bp * (log_prec_sum / orders as f64).exp()
}

fn weights(scores: &[f64], config: &MbrConfig) -> Vec<f64> {
    let n = scores.len();
    match config.weighting {
        MbrWeighting::Uniform => vec![1.0 / n as f64; n],
        MbrWeighting::ScoreSoftmax { temperature } => {
            let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
            let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scaled.iter().map(|s| (s - hi).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        }
    }
}

fn rank_pool<T: Clone + Eq + Hash + Ord>(
    pool: Vec<(Vec<T>, f64)>,
    config: &MbrConfig,
) -> Result<Vec<MbrCandidate<T>>, EnsembleError> {
    config.validate()?;
    if pool.is_empty() {
        return Err(EnsembleError::EmptyPool);
    }
    let MbrMetric::BleuSentence = config.metric;
    let profiles: Vec<NgramProfile<T>> = pool.iter().map(|(t, _)| profile(t)).collect();
    let scores: Vec<f64> = pool.iter().map(|(_, s)| *s).collect();
    let w = weights(&scores, config);

    let mut ranked: Vec<MbrCandidate<T>> = pool
        .iter()
        .enumerate()
        .map(|(i, (tokens, model_score))| {
            // Fixed index order keeps the summation deterministic.
            let utility: f64 = (0..pool.len())
                .map(|j| w[j] * sentence_bleu(&profiles[i], &profiles[j]))
                .sum();
            MbrCandidate {
                tokens: tokens.clone(),
                model_score: *model_score,
                utility,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then_with(|| b.model_score.total_cmp(&a.model_score))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(ranked)
}

/// Pool the entries of one or more n-best lists and rank them by expected
/// utility, descending. Ties break toward higher original model score, then
/// lexicographic tokens.
pub fn mbr_rank(
    nbest_lists: &[NBestList],
    config: &MbrConfig,
) -> Result<Vec<MbrCandidate<TokenId>>, EnsembleError> {
    let pool: Vec<(Vec<TokenId>, f64)> = nbest_lists
        .iter()
        .flat_map(|l| l.entries.iter().map(|e| (e.tokens.clone(), e.combined_logp)))
        .collect();
    rank_pool(pool, config)
}

/// Same ranking over already-rendered token strings, as read from n-best
/// files.
pub fn mbr_rank_sentences(
    candidates: Vec<(Vec<String>, f64)>,
    config: &MbrConfig,
) -> Result<Vec<MbrCandidate<String>>, EnsembleError> {
    rank_pool(candidates, config)
}
