//! Exhaustive-search oracles: small enough to be obviously correct, used to
//! pin the behavior of every beam search in the crate.

use thiserror::Error;

use crate::ctc::{ctc_forward, CtcError};
use crate::hyp::cmp_ranked;
use crate::lattice::PosteriorLattice;
use crate::logmath::{is_log_zero, log_add, log_sum, LOG_ZERO};
use crate::scorers::{JointScorer, PrefixScorer, ScorerError, TableJointScorer};
use crate::search::BeamConfig;
use crate::vocab::TokenId;

/// Hard cap on enumerable candidate sequences.
pub const SPACE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("search space of ~{size:.3e} sequences exceeds the {limit:.0e} enumeration limit")]
    SpaceTooLarge { size: f64, limit: f64 },
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Clone, Debug)]
pub struct OracleEntry {
    pub tokens: Vec<TokenId>,
    pub score: f64,
}

/// Full ranking of every enumerated sequence, best first under the shared
/// tie-break rules.
#[derive(Clone, Debug)]
pub struct OracleRanking {
    pub entries: Vec<OracleEntry>,
}

impl OracleRanking {
    pub fn top(&self) -> &OracleEntry {
        &self.entries[0]
    }
}

fn enumerated_size(alphabet: usize, max_len: usize) -> f64 {
    (alphabet as f64).powi(max_len as i32)
}

/// Visit every sequence over `alphabet` up to `max_len`, shortest first.
fn for_each_sequence<E>(
    alphabet: &[TokenId],
    max_len: usize,
    mut f: impl FnMut(&[TokenId]) -> Result<(), E>,
) -> Result<(), E> {
    f(&[])?;
    let mut idx: Vec<usize> = Vec::new();
    for len in 1..=max_len {
        if alphabet.is_empty() {
            break;
        }
        idx.clear();
        idx.resize(len, 0);
        'seqs: loop {
            let seq: Vec<TokenId> = idx.iter().map(|&i| alphabet[i]).collect();
            f(&seq)?;
            let mut i = 0;
            loop {
                if i == len {
                    break 'seqs;
                }
                idx[i] += 1;
                if idx[i] < alphabet.len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }
    Ok(())
}

/// Score every token sequence up to `max_len` with exactly the combined
/// final-score definition of the label-synchronous search (CTC full-sequence
/// likelihood, attention chain through the end symbol, length bonus) and
/// return the global ranking. Refuses when the space exceeds [`SPACE_LIMIT`].
pub fn exhaustive_oracle(
    lattice: &PosteriorLattice,
    scorer: &dyn PrefixScorer,
    config: &BeamConfig,
    max_len: usize,
) -> Result<OracleRanking, OracleError> {
    let emittable = lattice.vocab().emittable_ids();
    let size = enumerated_size(emittable.len(), max_len);
    if size > SPACE_LIMIT {
        return Err(OracleError::SpaceTooLarge {
            size,
            limit: SPACE_LIMIT,
        });
    }
    let t_len = lattice.frames();
    let eos = lattice.vocab().eos_id();
    let lambda = config.ctc_weight;
    let beta = config.length_bonus;

    let mut entries: Vec<OracleEntry> = Vec::new();
    for_each_sequence::<OracleError>(&emittable, max_len, |seq| {
        let mut att = 0.0;
        for (i, &tok) in seq.iter().enumerate() {
            att += scorer.score_prefix(&seq[..i], t_len)[tok];
        }
        att += scorer.score_prefix(seq, t_len)[eos];
        let ctc = ctc_forward(lattice, seq)?;
        let combined = lambda * ctc + (1.0 - lambda) * att + beta * seq.len() as f64;
        let score = if config.length_normalize {
            combined / seq.len().max(1) as f64
        } else {
            combined
        };
        entries.push(OracleEntry {
            tokens: seq.to_vec(),
            score,
        });
        Ok(())
    })?;
    entries.sort_by(|a, b| cmp_ranked(a.score, &a.tokens, b.score, &b.tokens));
    Ok(OracleRanking { entries })
}

/// Exact log-probability that a transducer emits exactly `labels`: forward
/// DP over the (frame, emitted-count) grid, marginalizing all blank/emit
/// interleavings. A path is complete once every frame has been consumed.
pub fn transducer_sequence_logp(
    t_len: usize,
    scorer: &dyn JointScorer,
    labels: &[TokenId],
) -> Result<f64, ScorerError> {
    let blank = scorer.blank_col();
    let u_len = labels.len();
    // alpha[u] = mass at (t, u) for the current t.
    let mut alpha = vec![LOG_ZERO; u_len + 1];
    alpha[0] = 0.0;
    for t in 0..t_len {
        let mut next = vec![LOG_ZERO; u_len + 1];
        // Emissions happen within frame t (left to right in u), then the
        // blank advances each cell to frame t+1.
        let mut cur = alpha;
        for u in 0..u_len {
            if is_log_zero(cur[u]) {
                continue;
            }
            let dist = scorer.score_joint(t, u, &labels[..u])?;
            let grown = cur[u] + dist[labels[u]];
            cur[u + 1] = log_add(cur[u + 1], grown);
        }
        for u in 0..=u_len {
            if is_log_zero(cur[u]) {
                continue;
            }
            let dist = scorer.score_joint(t, u, &labels[..u])?;
            next[u] = log_add(next[u], cur[u] + dist[blank]);
        }
        alpha = next;
    }
    Ok(alpha[u_len])
}

/// Enumerate all label sequences up to `u_cap`, marginalize path mass onto
/// each, and rank exactly as the beam variants do (length-normalized when
/// requested). Refuses on non-enumerable spaces.
pub fn transducer_oracle(
    t_len: usize,
    scorer: &dyn JointScorer,
    u_cap: usize,
    length_normalize: bool,
) -> Result<OracleRanking, OracleError> {
    let v = scorer.vocab_size();
    let size = enumerated_size(v, u_cap);
    if size > SPACE_LIMIT {
        return Err(OracleError::SpaceTooLarge {
            size,
            limit: SPACE_LIMIT,
        });
    }
    let alphabet: Vec<TokenId> = (0..v).collect();
    let mut entries = Vec::new();
    for_each_sequence::<OracleError>(&alphabet, u_cap, |seq| {
        let logp = transducer_sequence_logp(t_len, scorer, seq)?;
        let score = if length_normalize {
            logp / seq.len().max(1) as f64
        } else {
            logp
        };
        entries.push(OracleEntry {
            tokens: seq.to_vec(),
            score,
        });
        Ok(())
    })?;
    entries.sort_by(|a, b| cmp_ranked(a.score, &a.tokens, b.score, &b.tokens));
    Ok(OracleRanking { entries })
}

/// Total path mass over all label sequences of length at most `u_limit`,
/// computed without enumeration. Valid for table scorers because their rows
/// depend only on (t, u), not on prefix content; with a blank-dominant
/// default row the mass beyond any moderate `u_limit` is negligible, so the
/// result approaches 1 for a well-formed table.
pub fn transducer_total_mass(
    t_len: usize,
    scorer: &TableJointScorer,
    u_limit: usize,
) -> Result<f64, ScorerError> {
    let blank = scorer.blank_col();
    let mut alpha = vec![LOG_ZERO; u_limit + 1];
    alpha[0] = 0.0;
    for t in 0..t_len {
        let mut next = vec![LOG_ZERO; u_limit + 1];
        let mut cur = alpha;
        for u in 0..u_limit {
            if is_log_zero(cur[u]) {
                continue;
            }
            let dist = scorer.score_joint(t, u, &[])?;
            let emit_total = log_sum(&dist[..blank]);
            cur[u + 1] = log_add(cur[u + 1], cur[u] + emit_total);
        }
        for u in 0..=u_limit {
            if is_log_zero(cur[u]) {
                continue;
            }
            let dist = scorer.score_joint(t, u, &[])?;
            next[u] = log_add(next[u], cur[u] + dist[blank]);
        }
        alpha = next;
    }
    Ok(log_sum(&alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::TableJointScorer;
    use crate::testkit::rand_instance::{random_instance, random_joint, InstanceSpec};
    use rand::SeedableRng;

    #[test]
    fn refuses_oversized_spaces() {
        let (lat, scorer) = random_instance(&InstanceSpec {
            n_regular: 26, // plus unk: 27 emittable
            t_len: 2,
            seed: 0,
        });
        let err = exhaustive_oracle(&lat, &scorer, &BeamConfig::default(), 6).unwrap_err();
        assert!(matches!(err, OracleError::SpaceTooLarge { .. }));
    }

    #[test]
    fn single_frame_uniform_scorer_ranks_by_ctc_mass() {
        // A uniform scorer contributes the same attention mass to every
        // sequence of a given length, so the order among the single-token
        // candidates is decided by their CTC cell mass alone.
        let (lat, _) = random_instance(&InstanceSpec {
            n_regular: 2,
            t_len: 1,
            seed: 3,
        });
        let v = lat.vocab_size();
        let uniform = crate::scorers::TrieScorer::new(
            lat.vocab().clone(),
            vec![],
            vec![-(v as f64).ln(); v],
        )
        .unwrap();
        let config = BeamConfig {
            ctc_weight: 0.5,
            ..BeamConfig::default()
        };
        let ranking = exhaustive_oracle(&lat, &uniform, &config, 1).unwrap();
        let singles: Vec<&Vec<TokenId>> = ranking
            .entries
            .iter()
            .filter(|e| e.tokens.len() == 1)
            .map(|e| &e.tokens)
            .collect();
        let mut by_ctc: Vec<(Vec<TokenId>, f64)> = lat
            .vocab()
            .emittable_ids()
            .into_iter()
            .map(|id| (vec![id], lat.logp(0, id)))
            .collect();
        by_ctc.sort_by(|a, b| cmp_ranked(a.1, &a.0, b.1, &b.0));
        let want: Vec<&Vec<TokenId>> = by_ctc.iter().map(|e| &e.0).collect();
        assert_eq!(singles, want);
        // With the attention term disabled the full ranking, empty sequence
        // included, is by CTC mass.
        let ctc_only = BeamConfig {
            ctc_weight: 1.0,
            ..BeamConfig::default()
        };
        let ranking = exhaustive_oracle(&lat, &uniform, &ctc_only, 1).unwrap();
        let mut all = by_ctc;
        all.push((vec![], lat.logp(0, lat.vocab().blank_id())));
        all.sort_by(|a, b| cmp_ranked(a.1, &a.0, b.1, &b.0));
        let got: Vec<&Vec<TokenId>> = ranking.entries.iter().map(|e| &e.tokens).collect();
        let want: Vec<&Vec<TokenId>> = all.iter().map(|e| &e.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn transducer_oracle_refuses_large_spaces() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let scorer = random_joint(&mut rng, 40, 2, 2);
        assert!(matches!(
            transducer_oracle(2, &scorer, 4, true),
            Err(OracleError::SpaceTooLarge { .. })
        ));
    }

    #[test]
    fn transducer_oracle_hand_checkable_single_frame() {
        // T=1, two tokens. Every path emits all its tokens at t=0 and then
        // takes the blank. With rows keyed by (t=0, u) and u capped at 1:
        //   p(∅)     = blank(u=0)
        //   p([k])   = tok_k(u=0) * blank(u=1)
        //   p([k,j]) = tok_k(u=0) * tok_j(u=1) * blank(u=1)
        let rows = vec![
            (0usize, 0usize, vec![0.5f64.ln(), 0.2f64.ln(), 0.3f64.ln()]),
            (0, 1, vec![0.1f64.ln(), 0.2f64.ln(), 0.7f64.ln()]),
        ];
        let default = vec![0.05f64.ln(), 0.05f64.ln(), 0.9f64.ln()];
        let scorer = TableJointScorer::new(1, rows, default, None).unwrap();
        let oracle = transducer_oracle(1, &scorer, 2, false).unwrap();
        let get = |tokens: &[TokenId]| {
            oracle
                .entries
                .iter()
                .find(|e| e.tokens == tokens)
                .unwrap()
                .score
        };
        assert!((get(&[]) - 0.3f64.ln()).abs() < 1e-9);
        assert!((get(&[0]) - (0.5 * 0.7f64).ln()).abs() < 1e-9);
        assert!((get(&[1]) - (0.2 * 0.7f64).ln()).abs() < 1e-9);
        // Two emissions: the second and the closing blank both read row
        // (0, 1), since u=2 maps onto the u_max=1 cap.
        assert!((get(&[0, 0]) - (0.5 * 0.1 * 0.7f64).ln()).abs() < 1e-9);
        assert_eq!(oracle.top().tokens, vec![0]);
    }

    #[test]
    fn total_mass_is_one_for_blank_bounded_tables() {
        for seed in 0..10u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let scorer = random_joint(&mut rng, 3, 4, 2);
            let total = transducer_total_mass(4, &scorer, 120).unwrap();
            assert!(total.abs() < 1e-9, "seed {seed}: total {total}");
        }
    }

    #[test]
    fn sequence_logp_sums_to_total_on_small_spaces() {
        for seed in 20..26u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let scorer = random_joint(&mut rng, 2, 3, 2);
            let t_len = 3;
            // Enumerate far beyond u_cap to cover effectively all mass.
            let alphabet = [0usize, 1];
            let mut acc = LOG_ZERO;
            for_each_sequence::<ScorerError>(&alphabet, 12, |seq| {
                acc = log_add(acc, transducer_sequence_logp(t_len, &scorer, seq)?);
                Ok(())
            })
            .unwrap();
            let total = transducer_total_mass(t_len, &scorer, 12).unwrap();
            assert!(
                (acc - total).abs() < 1e-9,
                "seed {seed}: enumerated {acc} vs aggregate {total}"
            );
        }
    }
}
