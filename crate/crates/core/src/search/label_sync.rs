//! Label-synchronous joint beam search: hypotheses grow one token per step,
//! the attention scorer drives extension and the CTC prefix score is fused
//! at the configured weight. A hypothesis finishes on the end symbol with
//! its CTC mass finalized over every frame.

use crate::ctc::{end_detect, CtcPrefixScorer, CtcPrefixState};
use crate::hyp::{cmp_ranked, CtcLogPair, Hypothesis, NBestEntry, NBestList};
use crate::lattice::PosteriorLattice;
use crate::scorers::PrefixScorer;
use crate::search::{BeamConfig, SearchError};
use crate::vocab::TokenId;

struct LiveHyp {
    tokens: Vec<TokenId>,
    att_logp: f64,
    state: CtcPrefixState,
    combined: f64,
}

/// Search result plus the stopping diagnostics the streaming layer needs.
pub(crate) struct LabelSyncOutcome {
    pub nbest: NBestList,
    /// Best finished combined score, if any hypothesis finished.
    pub best_finished: Option<f64>,
    /// Best still-extendable combined score when the search stopped.
    pub best_live: Option<f64>,
}

/// Expand one token per step; finish on the end symbol; stop on beam
/// exhaustion, the length cap, or end detection. Returns the top `nbest`
/// finished hypotheses, or the best unfinished ones flagged `finished:
/// false` when nothing finished within the cap.
pub fn label_sync_search(
    lattice: &PosteriorLattice,
    scorer: &dyn PrefixScorer,
    config: &BeamConfig,
) -> Result<NBestList, SearchError> {
    Ok(label_sync_core(lattice, scorer, config, &[])?.nbest)
}

pub(crate) fn label_sync_core(
    lattice: &PosteriorLattice,
    scorer: &dyn PrefixScorer,
    config: &BeamConfig,
    initial_prefix: &[TokenId],
) -> Result<LabelSyncOutcome, SearchError> {
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

    let vocab = lattice.vocab();
    let eos = vocab.eos_id();
    let lambda = config.ctc_weight;
    let beta = config.length_bonus;
    let candidates = vocab.emittable_ids();
    let ctc = CtcPrefixScorer::new(lattice);
    let max_len = config.max_len(t_len).max(initial_prefix.len());

    // Seed from the (possibly empty) committed prefix.
    let mut seed_state = ctc.init();
    let mut seed_att = 0.0;
    let mut seed_psi = 0.0;
    for (i, &tok) in initial_prefix.iter().enumerate() {
        seed_att += scorer.score_prefix(&initial_prefix[..i], t_len)[tok];
        seed_psi = ctc.scores(&seed_state, &[tok], t_len)?[0];
        seed_state = ctc.child_state(&seed_state, tok, t_len)?;
    }
    let mut live = vec![LiveHyp {
        tokens: initial_prefix.to_vec(),
        att_logp: seed_att,
        combined: lambda * seed_psi
            + (1.0 - lambda) * seed_att
            + beta * initial_prefix.len() as f64,
        state: seed_state,
    }];

    let mut finished: Vec<Hypothesis> = Vec::new();
    // Best finished score per hypothesis length, ascending (lengths are
    // visited in order because all live hypotheses share a length).
    let mut profile: Vec<(usize, f64)> = Vec::new();
    // Best still-extendable score observed at any step.
    let mut best_live: Option<f64> = None;

    let end_cfg = config
        .end_detect
        .filter(|c| max_len >= c.window_lengths);

    while !live.is_empty() {
        let cur_len = live[0].tokens.len();
        for hyp in &live {
            best_live = Some(best_live.map_or(hyp.combined, |b: f64| b.max(hyp.combined)));
        }
        struct Candidate {
            parent: usize,
            token: TokenId,
            att_logp: f64,
            combined: f64,
        }
        let mut expansions: Vec<Candidate> = Vec::new();
        let mut best_fin_this_len: Option<f64> = None;

        for (idx, hyp) in live.iter().enumerate() {
            let att_dist = scorer.score_prefix(&hyp.tokens, t_len);
            // Finish on eos: CTC finalized over all frames.
            let fin_combined = lambda * ctc.finalize(&hyp.state)
                + (1.0 - lambda) * (hyp.att_logp + att_dist[eos])
                + beta * hyp.tokens.len() as f64;
            let pair = hyp.state.score_pair();
            finished.push(Hypothesis {
                tokens: hyp.tokens.clone(),
                att_logp: hyp.att_logp + att_dist[eos],
                ctc_logp: Some(CtcLogPair {
                    nonblank: pair.nonblank,
                    blank: pair.blank,
                }),
                transducer_logp: None,
                combined_logp: fin_combined,
                delays: vec![t_len; hyp.tokens.len()],
                finished: true,
            });
            best_fin_this_len = Some(match best_fin_this_len {
                Some(b) if b >= fin_combined => b,
                _ => fin_combined,
            });

            if cur_len >= max_len {
                continue;
            }
            let psis = ctc.scores(&hyp.state, &candidates, t_len)?;
            for (&c, &psi) in candidates.iter().zip(&psis) {
                let att = hyp.att_logp + att_dist[c];
                let combined =
                    lambda * psi + (1.0 - lambda) * att + beta * (cur_len + 1) as f64;
                expansions.push(Candidate {
                    parent: idx,
                    token: c,
                    att_logp: att,
                    combined,
                });
            }
        }

        if let Some(best) = best_fin_this_len {
            profile.push((cur_len, best));
        }
        if let Some(cfg) = &end_cfg {
            if end_detect(&profile, cfg) {
                break;
            }
        }
        if cur_len >= max_len {
            break;
        }

        expansions.sort_by(|a, b| {
            cmp_ranked(a.combined, &[], b.combined, &[])
                .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        });
        expansions.truncate(config.beam_size);
        let mut next = Vec::with_capacity(expansions.len());
        for cand in expansions {
            let parent = &live[cand.parent];
            let mut tokens = parent.tokens.clone();
            tokens.push(cand.token);
            next.push(LiveHyp {
                state: ctc.child_state(&parent.state, cand.token, t_len)?,
                tokens,
                att_logp: cand.att_logp,
                combined: cand.combined,
            });
        }
        live = next;
    }

    let best_finished = finished
        .iter()
        .map(|h| h.combined_logp)
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.max(x)))
        });

    let rank_score = |combined: f64, len: usize| {
        if config.length_normalize {
            combined / len.max(1) as f64
        } else {
            combined
        }
    };
    let entries: Vec<NBestEntry> = if finished.is_empty() {
        // Nothing finished within the cap: surface the best unfinished.
        live.iter()
            .map(|h| NBestEntry {
                tokens: h.tokens.clone(),
                combined_logp: rank_score(h.combined, h.tokens.len()),
                delays: vec![t_len; h.tokens.len()],
                finished: false,
            })
            .collect()
    } else {
        finished
            .into_iter()
            .map(|h| {
                let score = rank_score(h.combined_logp, h.tokens.len());
                let mut e = NBestEntry::from(h);
                e.combined_logp = score;
                e
            })
            .collect()
    };
    Ok(LabelSyncOutcome {
        nbest: NBestList::from_entries(entries, t_len, config.nbest),
        best_finished,
        best_live,
    })
}
