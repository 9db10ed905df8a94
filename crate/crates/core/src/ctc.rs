//! CTC dynamic programming: full-sequence likelihood, incremental prefix
//! scoring for joint decoding, greedy collapse, and end detection.
//!
//! All probabilities are natural-log with the [`LOG_ZERO`] floor. A label
//! probability is the sum over all blank-augmented alignments; a prefix
//! score is the probability that a token sequence is a prefix of the full
//! labeling given the frames consumed so far, decomposed into blank-ending
//! and non-blank-ending mass.

use thiserror::Error;

use crate::hyp::CtcLogPair;
use crate::lattice::PosteriorLattice;
use crate::logmath::{is_log_zero, log_add, LOG_ZERO};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("blank id {0} is not a valid label or extension candidate")]
    BlankNotAllowed(TokenId),
}

/// Full-sequence CTC log-likelihood: log Σ over all blank-augmented
/// alignments of `labels` across every frame of the lattice. Returns the
/// [`LOG_ZERO`] sentinel when the labels cannot fit in the available frames.
pub fn ctc_forward(lattice: &PosteriorLattice, labels: &[TokenId]) -> Result<f64, CtcError> {
    let blank = lattice.vocab().blank_id();
    let v = lattice.vocab_size();
    for &l in labels {
        if l >= v {
            return Err(CtcError::TokenOutOfRange { id: l, vocab: v });
        }
        if l == blank {
            return Err(CtcError::BlankNotAllowed(l));
        }
    }
    let t_len = lattice.frames();
    if labels.is_empty() {
        // All-blank path only.
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += lattice.logp(t, blank);
        }
        return Ok(if is_log_zero(acc) { LOG_ZERO } else { acc });
    }
    if t_len == 0 {
        return Ok(LOG_ZERO);
    }

    // Alpha over the blank-augmented state sequence b l1 b l2 ... lL b.
    let s_len = 2 * labels.len() + 1;
    let sym = |s: usize| -> TokenId {
        if s.is_multiple_of(2) {
            blank
        } else {
            labels[s / 2]
        }
    };
    let mut alpha = vec![LOG_ZERO; s_len];
    alpha[0] = lattice.logp(0, blank);
    alpha[1] = lattice.logp(0, labels[0]);
    let mut next = vec![LOG_ZERO; s_len];
    for t in 1..t_len {
        for (s, slot) in next.iter_mut().enumerate() {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add(acc, alpha[s - 1]);
            }
            // Skip transition: only into a non-blank that differs from the
            // previous non-blank (repeats need an intervening blank).
            if s >= 2 && s % 2 == 1 && sym(s) != sym(s - 2) {
                acc = log_add(acc, alpha[s - 2]);
            }
            *slot = if is_log_zero(acc) {
                LOG_ZERO
            } else {
                acc + lattice.logp(t, sym(s))
            };
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    let total = log_add(alpha[s_len - 1], alpha[s_len - 2]);
    Ok(if is_log_zero(total) { LOG_ZERO } else { total })
}

/// Per-frame argmax, collapse repeats, remove blanks. Ties resolve to the
/// lowest token id.
pub fn ctc_greedy(lattice: &PosteriorLattice) -> Vec<TokenId> {
    let blank = lattice.vocab().blank_id();
    let mut out = Vec::new();
    let mut prev = blank;
    for t in 0..lattice.frames() {
        let row = lattice.row(t);
        let mut best = 0;
        for (i, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = i;
            }
        }
        if best != blank && best != prev {
            out.push(best);
        }
        prev = best;
    }
    out
}

/// Incremental prefix-scoring state: the blank-ending and non-blank-ending
/// forward mass of one prefix at every consumed frame, plus the prefix
/// itself so the state can be advanced to later frames exactly.
#[derive(Clone, Debug)]
pub struct CtcPrefixState {
    tokens: Vec<TokenId>,
    /// nonblank[t] / blank[t]: mass of alignments over frames 0..=t that
    /// collapse to exactly `tokens`, split by the alignment's last symbol.
    nonblank: Vec<f64>,
    blank: Vec<f64>,
}

impl CtcPrefixState {
    pub fn prefix(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn last_token(&self) -> Option<TokenId> {
        self.tokens.last().copied()
    }

    /// Frames consumed by this state.
    pub fn frames(&self) -> usize {
        self.blank.len()
    }

    /// Blank/non-blank mass after the last consumed frame.
    pub fn score_pair(&self) -> CtcLogPair {
        if self.blank.is_empty() {
            // Zero frames: the empty prefix has unit (blank-ending) mass.
            if self.tokens.is_empty() {
                CtcLogPair {
                    nonblank: LOG_ZERO,
                    blank: 0.0,
                }
            } else {
                CtcLogPair {
                    nonblank: LOG_ZERO,
                    blank: LOG_ZERO,
                }
            }
        } else {
            CtcLogPair {
                nonblank: *self.nonblank.last().unwrap(),
                blank: *self.blank.last().unwrap(),
            }
        }
    }

    /// exp(nonblank) + exp(blank) ≤ 1 at every frame, within tolerance.
    pub fn invariants_ok(&self) -> bool {
        self.nonblank.len() == self.blank.len()
            && self
                .nonblank
                .iter()
                .zip(&self.blank)
                .all(|(&n, &b)| log_add(n, b) <= 1e-6)
    }
}

/// Extension of one prefix by one candidate token.
#[derive(Clone, Debug)]
pub struct CtcExtension {
    pub token: TokenId,
    /// log p(prefix·token is a prefix of the full labeling | frames seen).
    pub prefix_logp: f64,
    pub state: CtcPrefixState,
}

/// Batch prefix scorer over one lattice.
pub struct CtcPrefixScorer<'a> {
    lattice: &'a PosteriorLattice,
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(lattice: &'a PosteriorLattice) -> Self {
        CtcPrefixScorer { lattice }
    }

    /// Empty-prefix state over the first `upto_frame` frames: cumulative
    /// blank-run mass.
    pub fn init_upto(&self, upto_frame: usize) -> CtcPrefixState {
        let blank = self.lattice.vocab().blank_id();
        let mut b = Vec::with_capacity(upto_frame);
        let mut acc = 0.0;
        for t in 0..upto_frame {
            acc += self.lattice.logp(t, blank);
            if is_log_zero(acc) {
                acc = LOG_ZERO;
            }
            b.push(acc);
        }
        CtcPrefixState {
            tokens: Vec::new(),
            nonblank: vec![LOG_ZERO; upto_frame],
            blank: b,
        }
    }

    /// Empty-prefix state over every frame of the lattice.
    pub fn init(&self) -> CtcPrefixState {
        self.init_upto(self.lattice.frames())
    }

    /// Prefix-extension scores for every candidate in one frame sweep.
    /// `upto_frame` may exceed the state's consumed frames, in which case the
    /// state is advanced exactly (by recomputing its chain) first.
    pub fn scores(
        &self,
        state: &CtcPrefixState,
        candidates: &[TokenId],
        upto_frame: usize,
    ) -> Result<Vec<f64>, CtcError> {
        self.check_candidates(candidates)?;
        let owned;
        let state = if upto_frame > state.frames() {
            owned = self.advance(state, upto_frame);
            &owned
        } else {
            state
        };
        Ok(self.scores_unchecked(state, candidates, upto_frame))
    }

    /// State for `state.prefix() · token` over `upto_frame` frames.
    pub fn child_state(
        &self,
        state: &CtcPrefixState,
        token: TokenId,
        upto_frame: usize,
    ) -> Result<CtcPrefixState, CtcError> {
        self.check_candidates(&[token])?;
        let owned;
        let state = if upto_frame > state.frames() {
            owned = self.advance(state, upto_frame);
            &owned
        } else {
            state
        };
        Ok(self.child_unchecked(state, token, upto_frame))
    }

    /// Scores and successor states for a candidate set.
    pub fn extend(
        &self,
        state: &CtcPrefixState,
        candidates: &[TokenId],
        upto_frame: usize,
    ) -> Result<Vec<CtcExtension>, CtcError> {
        self.check_candidates(candidates)?;
        let owned;
        let state = if upto_frame > state.frames() {
            owned = self.advance(state, upto_frame);
            &owned
        } else {
            state
        };
        let scores = self.scores_unchecked(state, candidates, upto_frame);
        Ok(candidates
            .iter()
            .zip(scores)
            .map(|(&token, prefix_logp)| CtcExtension {
                token,
                prefix_logp,
                state: self.child_unchecked(state, token, upto_frame),
            })
            .collect())
    }

    /// Probability that the full labeling equals the state's prefix exactly,
    /// over the state's consumed frames. Agrees with [`ctc_forward`].
    pub fn finalize(&self, state: &CtcPrefixState) -> f64 {
        let pair = state.score_pair();
        let total = pair.total();
        if is_log_zero(total) {
            LOG_ZERO
        } else {
            total
        }
    }

    fn check_candidates(&self, candidates: &[TokenId]) -> Result<(), CtcError> {
        let blank = self.lattice.vocab().blank_id();
        let v = self.lattice.vocab_size();
        for &c in candidates {
            if c >= v {
                return Err(CtcError::TokenOutOfRange { id: c, vocab: v });
            }
            if c == blank {
                return Err(CtcError::BlankNotAllowed(c));
            }
        }
        Ok(())
    }

    /// Recompute the state's chain from the empty prefix out to `upto_frame`
    /// frames. Exact: every ancestor is rebuilt over the full range.
    fn advance(&self, state: &CtcPrefixState, upto_frame: usize) -> CtcPrefixState {
        let mut cur = self.init_upto(upto_frame);
        for &tok in &state.tokens {
            cur = self.child_unchecked(&cur, tok, upto_frame);
        }
        cur
    }

    /// One pass over the frames, scoring all candidates simultaneously.
    fn scores_unchecked(
        &self,
        state: &CtcPrefixState,
        candidates: &[TokenId],
        upto_frame: usize,
    ) -> Vec<f64> {
        debug_assert!(upto_frame <= state.frames());
        let last = state.last_token();
        let empty_prefix = state.tokens.is_empty();
        let blank_mass_at = |t: usize| state.blank[t];
        let total_mass_at = |t: usize| log_add(state.blank[t], state.nonblank[t]);

        let mut psi = vec![LOG_ZERO; candidates.len()];
        if upto_frame == 0 {
            return psi;
        }
        for (i, &c) in candidates.iter().enumerate() {
            // New-emission mass at frame 0: only from the empty prefix.
            if empty_prefix {
                psi[i] = self.lattice.logp(0, c);
            }
        }
        for t in 1..upto_frame {
            let phi_all = total_mass_at(t - 1);
            let phi_blank = blank_mass_at(t - 1);
            for (i, &c) in candidates.iter().enumerate() {
                let phi = if Some(c) == last { phi_blank } else { phi_all };
                if is_log_zero(phi) {
                    continue;
                }
                psi[i] = log_add(psi[i], phi + self.lattice.logp(t, c));
            }
        }
        for p in &mut psi {
            if is_log_zero(*p) {
                *p = LOG_ZERO;
            }
        }
        psi
    }

    fn child_unchecked(
        &self,
        state: &CtcPrefixState,
        token: TokenId,
        upto_frame: usize,
    ) -> CtcPrefixState {
        debug_assert!(upto_frame <= state.frames());
        let blank = self.lattice.vocab().blank_id();
        let last = state.last_token();
        let empty_prefix = state.tokens.is_empty();
        let mut tokens = state.tokens.clone();
        tokens.push(token);

        let mut nonblank = vec![LOG_ZERO; upto_frame];
        let mut blank_m = vec![LOG_ZERO; upto_frame];
        for t in 0..upto_frame {
            let (prev_n, prev_b) = if t == 0 {
                (LOG_ZERO, LOG_ZERO)
            } else {
                (nonblank[t - 1], blank_m[t - 1])
            };
            let phi_prev = if t == 0 {
                // Parent completed within zero frames: only the empty prefix.
                if empty_prefix {
                    0.0
                } else {
                    LOG_ZERO
                }
            } else if Some(token) == last {
                state.blank[t - 1]
            } else {
                log_add(state.blank[t - 1], state.nonblank[t - 1])
            };
            let n = log_add(prev_n, phi_prev);
            nonblank[t] = if is_log_zero(n) {
                LOG_ZERO
            } else {
                n + self.lattice.logp(t, token)
            };
            let b = log_add(prev_b, prev_n);
            blank_m[t] = if is_log_zero(b) {
                LOG_ZERO
            } else {
                b + self.lattice.logp(t, blank)
            };
        }
        CtcPrefixState {
            tokens,
            nonblank,
            blank: blank_m,
        }
    }
}

/// Empty-prefix state over every frame: blank-run probabilities accumulated
/// across the lattice.
pub fn ctc_prefix_init(lattice: &PosteriorLattice) -> CtcPrefixState {
    CtcPrefixScorer::new(lattice).init()
}

/// Per-candidate extension scores and successor states; see
/// [`CtcPrefixScorer::extend`].
pub fn ctc_prefix_extend(
    lattice: &PosteriorLattice,
    state: &CtcPrefixState,
    candidates: &[TokenId],
    upto_frame: usize,
) -> Result<Vec<CtcExtension>, CtcError> {
    CtcPrefixScorer::new(lattice).extend(state, candidates, upto_frame)
}

/// Stopping rule on a best-score-by-hypothesis-length profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndDetectConfig {
    /// Gap (nats) below the global best at which a length counts as dead.
    pub threshold_logp_gap: f64,
    /// Number of consecutive most-recent lengths that must all be dead.
    pub window_lengths: usize,
}

impl Default for EndDetectConfig {
    fn default() -> Self {
        EndDetectConfig {
            threshold_logp_gap: -10.0,
            window_lengths: 3,
        }
    }
}

/// True iff the `window_lengths` most recent consecutive lengths in the
/// profile all score below the global best by more than the threshold gap.
/// `scored_lengths` holds `(hypothesis length, best combined score at that
/// length)` for every observed length, ascending.
pub fn end_detect(scored_lengths: &[(usize, f64)], config: &EndDetectConfig) -> bool {
    if scored_lengths.is_empty() || config.window_lengths == 0 {
        return false;
    }
    let global_best = scored_lengths
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_len = scored_lengths.last().unwrap().0;
    if max_len + 1 < config.window_lengths {
        return false;
    }
    let mut dead = 0;
    for m in 0..config.window_lengths {
        let want = max_len - m;
        let Some(&(_, score)) = scored_lengths.iter().find(|&&(l, _)| l == want) else {
            return false;
        };
        if score - global_best < config.threshold_logp_gap {
            dead += 1;
        }
    }
    dead == config.window_lengths
}
