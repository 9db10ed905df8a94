//! Time-synchronous joint beam search: the beam advances one source frame
//! per step carrying CTC prefix mass (blank/non-blank split), and newly
//! created prefixes are fused with attention scores. Prefixes identical
//! after CTC collapse merge by log-sum-exp of their CTC mass; the attention
//! component is prefix-deterministic so the merged value is shared.
//!
//! Attention scores condition on the frames processed so far, which makes
//! the same beam reusable for blockwise incremental decoding.

use std::collections::HashMap;

use crate::hyp::{CtcLogPair, Hypothesis, NBestEntry, NBestList};
use crate::lattice::PosteriorLattice;
use crate::logmath::{log_add, LOG_ZERO};
use crate::scorers::PrefixScorer;
use crate::search::{BeamConfig, SearchError};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Debug)]
struct TsEntry {
    tokens: Vec<TokenId>,
    /// CTC mass of alignments collapsing to `tokens`, ending in blank.
    pb: f64,
    /// Same, ending in the last token.
    pnb: f64,
    att_logp: f64,
    /// Frames consumed when each token first entered the beam.
    delays: Vec<usize>,
}

impl TsEntry {
    fn ctc_total(&self) -> f64 {
        log_add(self.pb, self.pnb)
    }
}

/// Frame-synchronous beam, advanced one row at a time.
pub(crate) struct TimeSyncBeam {
    entries: Vec<TsEntry>,
    frames_done: usize,
    beam_size: usize,
    lambda: f64,
    beta: f64,
}

impl TimeSyncBeam {
    pub(crate) fn new(config: &BeamConfig) -> TimeSyncBeam {
        TimeSyncBeam {
            entries: vec![TsEntry {
                tokens: Vec::new(),
                pb: 0.0,
                pnb: LOG_ZERO,
                att_logp: 0.0,
                delays: Vec::new(),
            }],
            frames_done: 0,
            beam_size: config.beam_size,
            lambda: config.ctc_weight,
            beta: config.length_bonus,
        }
    }

    pub(crate) fn frames_done(&self) -> usize {
        self.frames_done
    }

    fn running_score(&self, e: &TsEntry) -> f64 {
        self.lambda * e.ctc_total()
            + (1.0 - self.lambda) * e.att_logp
            + self.beta * e.tokens.len() as f64
    }

    /// Consume one frame row, expanding and pruning the beam. Candidate
    /// token sequences are only materialized for the survivors; an
    /// extension landing on a sequence already tracked by the beam merges
    /// into that entry's continuation instead (same collapse, so identical
    /// attention and creation metadata).
    pub(crate) fn feed(&mut self, row: &[f64], vocab: &Vocabulary, scorer: &dyn PrefixScorer) {
        let blank = vocab.blank_id();
        let frames_visible = self.frames_done + 1;
        let floor = |x: f64| if x <= LOG_ZERO { LOG_ZERO } else { x };

        // (parent index, token) pairs whose extension equals another entry
        // already in the beam.
        let index_of: HashMap<&[TokenId], usize> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.tokens.as_slice(), i))
            .collect();
        let mut merge_into: HashMap<(usize, TokenId), usize> = HashMap::new();
        for (j, e) in self.entries.iter().enumerate() {
            if let Some((&last, head)) = e.tokens.split_last() {
                if let Some(&i) = index_of.get(head) {
                    merge_into.insert((i, last), j);
                }
            }
        }

        // Continuations: blank or repeated-last emission keeps the prefix.
        struct Cont {
            pb: f64,
            pnb: f64,
        }
        let mut conts: Vec<Cont> = self
            .entries
            .iter()
            .map(|e| {
                let pb = floor(row[blank] + e.ctc_total());
                let pnb = match e.tokens.last() {
                    Some(&last) => floor(row[last] + e.pnb),
                    None => LOG_ZERO,
                };
                Cont { pb, pnb }
            })
            .collect();

        // Extensions: new prefixes carry only non-blank mass. Scores are
        // computed without building the token sequence.
        struct Ext {
            parent: usize,
            token: TokenId,
            pnb: f64,
            att_logp: f64,
            score: f64,
        }
        let mut exts: Vec<Ext> = Vec::with_capacity(self.entries.len() * vocab.size());
        for (i, e) in self.entries.iter().enumerate() {
            let ptot = e.ctc_total();
            let last = e.tokens.last().copied();
            let att_dist = scorer.score_prefix(&e.tokens, frames_visible);
            for c in 0..vocab.size() {
                if vocab.is_reserved(c) {
                    continue;
                }
                let base = if Some(c) == last { e.pb } else { ptot };
                let contrib = floor(row[c] + base);
                if let Some(&j) = merge_into.get(&(i, c)) {
                    conts[j].pnb = log_add(conts[j].pnb, contrib);
                    continue;
                }
                let att_logp = e.att_logp + att_dist[c];
                let score = self.lambda * contrib
                    + (1.0 - self.lambda) * att_logp
                    + self.beta * (e.tokens.len() + 1) as f64;
                exts.push(Ext {
                    parent: i,
                    token: c,
                    pnb: contrib,
                    att_logp,
                    score,
                });
            }
        }

        // Rank continuations and extensions together under the shared
        // tie-break, comparing extension sequences as parent-plus-token.
        enum Cand {
            Cont(usize),
            Ext(usize),
        }
        let cont_score = |j: usize| {
            let e = &self.entries[j];
            self.lambda * log_add(conts[j].pb, conts[j].pnb)
                + (1.0 - self.lambda) * e.att_logp
                + self.beta * e.tokens.len() as f64
        };
        let seq_cmp = |a: &Cand, b: &Cand| -> std::cmp::Ordering {
            let view = |c: &Cand| -> (&[TokenId], Option<TokenId>) {
                match *c {
                    Cand::Cont(j) => (self.entries[j].tokens.as_slice(), None),
                    Cand::Ext(k) => {
                        let e = &exts[k];
                        (self.entries[e.parent].tokens.as_slice(), Some(e.token))
                    }
                }
            };
            let (ah, at) = view(a);
            let (bh, bt) = view(b);
            let a_len = ah.len() + at.is_some() as usize;
            let b_len = bh.len() + bt.is_some() as usize;
            a_len.cmp(&b_len).then_with(|| {
                let a_iter = ah.iter().copied().chain(at);
                let b_iter = bh.iter().copied().chain(bt);
                a_iter.cmp(b_iter)
            })
        };
        let mut cands: Vec<(f64, Cand)> = (0..self.entries.len())
            .map(|j| (cont_score(j), Cand::Cont(j)))
            .chain((0..exts.len()).map(|k| (exts[k].score, Cand::Ext(k))))
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| seq_cmp(&a.1, &b.1)));
        cands.truncate(self.beam_size);

        let entries = std::mem::take(&mut self.entries);
        let mut next: Vec<TsEntry> = Vec::with_capacity(cands.len());
        for (_, cand) in cands {
            match cand {
                Cand::Cont(j) => {
                    let e = &entries[j];
                    next.push(TsEntry {
                        tokens: e.tokens.clone(),
                        pb: conts[j].pb,
                        pnb: conts[j].pnb,
                        att_logp: e.att_logp,
                        delays: e.delays.clone(),
                    });
                }
                Cand::Ext(k) => {
                    let ext = &exts[k];
                    let parent = &entries[ext.parent];
                    let mut tokens = parent.tokens.clone();
                    tokens.push(ext.token);
                    let mut delays = parent.delays.clone();
                    delays.push(frames_visible);
                    next.push(TsEntry {
                        tokens,
                        pb: LOG_ZERO,
                        pnb: ext.pnb,
                        att_logp: ext.att_logp,
                        delays,
                    });
                }
            }
        }
        self.entries = next;
        self.frames_done += 1;
    }

    /// Terminal hypotheses: the running score plus the attention step onto
    /// the end symbol, so the ranking matches the label-synchronous final
    /// score definition.
    pub(crate) fn finalize_hypotheses(
        &self,
        vocab: &Vocabulary,
        scorer: &dyn PrefixScorer,
    ) -> Vec<Hypothesis> {
        let eos = vocab.eos_id();
        self.entries
            .iter()
            .map(|e| {
                let att_eos = scorer.score_prefix(&e.tokens, self.frames_done)[eos];
                let combined = self.lambda * e.ctc_total()
                    + (1.0 - self.lambda) * (e.att_logp + att_eos)
                    + self.beta * e.tokens.len() as f64;
                Hypothesis {
                    tokens: e.tokens.clone(),
                    att_logp: e.att_logp + att_eos,
                    ctc_logp: Some(CtcLogPair {
                        nonblank: e.pnb,
                        blank: e.pb,
                    }),
                    transducer_logp: None,
                    combined_logp: combined,
                    delays: e.delays.clone(),
                    finished: true,
                }
            })
            .collect()
    }

    /// Best-score-per-length profile of the live beam (running scores),
    /// ascending by length; drives boundary end detection.
    pub(crate) fn length_profile(&self) -> Vec<(usize, f64)> {
        let mut by_len: HashMap<usize, f64> = HashMap::new();
        for e in &self.entries {
            let s = self.running_score(e);
            by_len
                .entry(e.tokens.len())
                .and_modify(|b| *b = b.max(s))
                .or_insert(s);
        }
        let mut profile: Vec<(usize, f64)> = by_len.into_iter().collect();
        profile.sort_by_key(|&(l, _)| l);
        profile
    }

    /// Drop beam entries that do not extend the committed prefix.
    pub(crate) fn retain_extending(&mut self, committed: &[TokenId]) {
        self.entries.retain(|e| e.tokens.starts_with(committed));
    }

    /// Collapse to the best entry (entries stay sorted after `feed`).
    pub(crate) fn keep_top1(&mut self) {
        self.entries.truncate(1);
    }
}

/// Terminal ranking of a live beam: the shared final-score definition with
/// optional length normalization, shaped into a well-formed n-best list.
pub(crate) fn rank_terminal(
    beam: &TimeSyncBeam,
    vocab: &Vocabulary,
    scorer: &dyn PrefixScorer,
    config: &BeamConfig,
) -> NBestList {
    let hyps = beam.finalize_hypotheses(vocab, scorer);
    let entries: Vec<NBestEntry> = hyps
        .into_iter()
        .map(|h| {
            let score = if config.length_normalize {
                h.combined_logp / h.tokens.len().max(1) as f64
            } else {
                h.combined_logp
            };
            let mut e = NBestEntry::from(h);
            e.combined_logp = score;
            e
        })
        .collect();
    NBestList::from_entries(entries, beam.frames_done(), config.nbest)
}

/// Frame-synchronous CTC prefix beam search with attention fusion. Emission
/// delays record the frames consumed when each token's prefix first entered
/// the beam.
pub fn time_sync_search(
    lattice: &PosteriorLattice,
    scorer: &dyn PrefixScorer,
    config: &BeamConfig,
) -> Result<NBestList, SearchError> {
    config.validate()?;
    let t_len = lattice.frames();
    if t_len == 0 {
        return Err(SearchError::EmptyLattice);
    }
    if scorer.vocab_size() != lattice.vocab_size() {
        return Err(SearchError::VocabMismatch {
            scorer: scorer.vocab_size(),
            lattice: lattice.vocab_size(),
        });
    }
    let mut beam = TimeSyncBeam::new(config);
    for t in 0..t_len {
        beam.feed(lattice.row(t), lattice.vocab(), scorer);
    }
    Ok(rank_terminal(&beam, lattice.vocab(), scorer, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::rand_instance::{random_instance, InstanceSpec};

    #[test]
    fn delays_non_decreasing_and_bounded() {
        for seed in 0..20 {
            let (lat, scorer) = random_instance(&InstanceSpec {
                n_regular: 3,
                t_len: 6,
                seed,
            });
            let config = BeamConfig {
                beam_size: 4,
                nbest: 4,
                ..BeamConfig::default()
            };
            let out = time_sync_search(&lat, &scorer, &config).unwrap();
            assert!(out.is_well_formed());
            for e in &out.entries {
                assert_eq!(e.delays.len(), e.tokens.len());
                assert!(e.delays.windows(2).all(|w| w[0] <= w[1]));
                assert!(e.delays.iter().all(|&d| d <= lat.frames()));
            }
        }
    }

    #[test]
    fn pure_ctc_matches_prefix_beam_semantics() {
        // ctc_weight 1 disables attention entirely: the top hypothesis has
        // the largest collapsed CTC mass among sequences the beam reaches.
        let (lat, scorer) = random_instance(&InstanceSpec {
            n_regular: 2,
            t_len: 4,
            seed: 11,
        });
        let config = BeamConfig {
            ctc_weight: 1.0,
            beam_size: 128,
            nbest: 1,
            end_detect: None,
            ..BeamConfig::default()
        };
        let got = time_sync_search(&lat, &scorer, &config).unwrap();
        // Exhaustive check over all sequences up to the frame count.
        let oracle = crate::testkit::exhaustive_oracle(&lat, &scorer, &config, lat.frames())
            .unwrap();
        assert_eq!(got.top().unwrap().tokens, oracle.entries[0].tokens);
    }

    #[test]
    fn beam_monotonicity_in_beam_size() {
        for seed in [3u64, 5, 9] {
            let (lat, scorer) = random_instance(&InstanceSpec {
                n_regular: 3,
                t_len: 5,
                seed,
            });
            let mut prev_best = f64::NEG_INFINITY;
            for beam_size in [1usize, 2, 4, 8, 32, 128] {
                let config = BeamConfig {
                    beam_size,
                    nbest: 1,
                    end_detect: None,
                    ..BeamConfig::default()
                };
                let out = time_sync_search(&lat, &scorer, &config).unwrap();
                let best = out.top().unwrap().combined_logp;
                assert!(
                    best >= prev_best - 1e-9,
                    "beam {beam_size} regressed: {best} < {prev_best}"
                );
                prev_best = prev_best.max(best);
            }
        }
    }
}
