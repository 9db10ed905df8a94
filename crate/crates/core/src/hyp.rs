//! Search hypotheses and ranked n-best lists.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::logmath::log_add;
use crate::vocab::TokenId;

/// Blank/non-blank decomposition of a prefix's CTC mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtcLogPair {
    pub nonblank: f64,
    pub blank: f64,
}

impl CtcLogPair {
    pub fn total(&self) -> f64 {
        log_add(self.nonblank, self.blank)
    }
}

/// A (partial or finished) decode: a token prefix with its per-source score
/// components, the combined score, and per-token emission delays.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    /// Emitted token ids; never contains blank, start, or end symbols.
    pub tokens: Vec<TokenId>,
    pub att_logp: f64,
    pub ctc_logp: Option<CtcLogPair>,
    pub transducer_logp: Option<f64>,
    pub combined_logp: f64,
    /// Source frames consumed (or emission frame, for transducer searches)
    /// when each token was produced; same length as `tokens`, non-decreasing.
    pub delays: Vec<usize>,
    pub finished: bool,
}

impl Hypothesis {
    /// Structural invariants every live or returned hypothesis must satisfy.
    pub fn invariants_ok(&self) -> bool {
        self.delays.len() == self.tokens.len()
            && self.delays.windows(2).all(|w| w[0] <= w[1])
            && self.combined_logp.is_finite()
    }
}

/// Ranking order shared by every search and oracle in the crate: higher
/// score first, then shorter token sequence, then lexicographic token ids.
/// Returns the position of `a` relative to `b` in a best-first sort.
pub fn cmp_ranked(score_a: f64, tokens_a: &[TokenId], score_b: f64, tokens_b: &[TokenId]) -> Ordering {
    score_b
        .total_cmp(&score_a)
        .then_with(|| tokens_a.len().cmp(&tokens_b.len()))
        .then_with(|| tokens_a.cmp(tokens_b))
}

/// One ranked decode result.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestEntry {
    pub tokens: Vec<TokenId>,
    /// The ranking score (length-normalized when the producing search had
    /// normalization enabled).
    pub combined_logp: f64,
    pub delays: Vec<usize>,
    pub finished: bool,
}

impl From<Hypothesis> for NBestEntry {
    fn from(h: Hypothesis) -> Self {
        NBestEntry {
            tokens: h.tokens,
            combined_logp: h.combined_logp,
            delays: h.delays,
            finished: h.finished,
        }
    }
}

/// Ranked, de-duplicated list of finished hypotheses; the interchange object
/// between search, ensembling, and metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NBestList {
    pub entries: Vec<NBestEntry>,
    pub source_len_frames: usize,
}

impl NBestList {
    /// Sort best-first, drop duplicate token sequences (keeping the best
    /// scored), and truncate to `limit`.
    pub fn from_entries(
        mut entries: Vec<NBestEntry>,
        source_len_frames: usize,
        limit: usize,
    ) -> Self {
        entries.sort_by(|a, b| cmp_ranked(a.combined_logp, &a.tokens, b.combined_logp, &b.tokens));
        let mut seen: HashSet<Vec<TokenId>> = HashSet::with_capacity(entries.len());
        entries.retain(|e| seen.insert(e.tokens.clone()));
        entries.truncate(limit);
        NBestList {
            entries,
            source_len_frames,
        }
    }

    pub fn top(&self) -> Option<&NBestEntry> {
        self.entries.first()
    }

    /// Sortedness and uniqueness, as promised on every produced list.
    pub fn is_well_formed(&self) -> bool {
        let sorted = self
            .entries
            .windows(2)
            .all(|w| w[0].combined_logp >= w[1].combined_logp);
        let mut seen = HashSet::new();
        let unique = self.entries.iter().all(|e| seen.insert(&e.tokens));
        sorted && unique
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_by_length_then_ids() {
        assert_eq!(cmp_ranked(-1.0, &[2], -2.0, &[1]), Ordering::Less);
        assert_eq!(cmp_ranked(-1.0, &[2, 3], -1.0, &[4]), Ordering::Greater);
        assert_eq!(cmp_ranked(-1.0, &[2, 3], -1.0, &[2, 4]), Ordering::Less);
        assert_eq!(cmp_ranked(-1.0, &[2], -1.0, &[2]), Ordering::Equal);
    }

    #[test]
    fn nbest_sorts_dedups_truncates() {
        let e = |tokens: Vec<TokenId>, s: f64| NBestEntry {
            tokens,
            combined_logp: s,
            delays: vec![],
            finished: true,
        };
        let list = NBestList::from_entries(
            vec![
                e(vec![1], -2.0),
                e(vec![2], -1.0),
                e(vec![1], -0.5),
                e(vec![3], -3.0),
            ],
            10,
            2,
        );
        assert!(list.is_well_formed());
        assert_eq!(list.entries.len(), 2);
        assert_eq!(list.entries[0].tokens, vec![1]);
        assert_eq!(list.entries[0].combined_logp, -0.5);
        assert_eq!(list.entries[1].tokens, vec![2]);
    }

    #[test]
    fn hypothesis_invariants() {
        let h = Hypothesis {
            tokens: vec![1, 2],
            att_logp: -1.0,
            ctc_logp: None,
            transducer_logp: None,
            combined_logp: -1.0,
            delays: vec![3, 3],
            finished: true,
        };
        assert!(h.invariants_ok());
        let bad = Hypothesis {
            delays: vec![4, 3],
            ..h
        };
        assert!(!bad.invariants_ok());
    }
}
