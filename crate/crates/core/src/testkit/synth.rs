//! Planted-sequence fixtures: a lattice that spells a known token sequence,
//! a trie scorer biased toward it, and the matching reference string.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::lattice::PosteriorLattice;
use crate::logmath::log_sum;
use crate::scorers::{TableJointScorer, TrieScorer};
use crate::vocab::{TokenId, Vocabulary};

/// Recipe for one synthetic decode task. Output is deterministic for a
/// fixed seed.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    /// Regular (emittable) tokens in the vocabulary.
    pub vocab_size: usize,
    /// Indices into the regular token range, in emission order.
    pub planted_sequence: Vec<usize>,
    pub frames_per_token: usize,
    /// Uniform perturbation magnitude applied per cell before renormalizing.
    pub noise_logp: f64,
    pub seed: u64,
    /// Blank-dominated frames appended after the sequence.
    pub trailing_blank_frames: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 4,
            planted_sequence: vec![0, 1, 2],
            frames_per_token: 3,
            noise_logp: 0.0,
            seed: 0,
            trailing_blank_frames: 0,
        }
    }
}

pub struct SyntheticTask {
    pub lattice: PosteriorLattice,
    pub scorer: TrieScorer,
    pub reference: String,
}

const PEAK: f64 = 0.92;

fn peaked_row(v: usize, id: usize) -> Vec<f64> {
    let rest = ((1.0 - PEAK) / (v - 1) as f64).ln();
    let mut row = vec![rest; v];
    row[id] = PEAK.ln();
    row
}

fn perturb(row: &mut [f64], noise: f64, rng: &mut impl Rng) {
    if noise > 0.0 {
        for x in row.iter_mut() {
            *x += rng.gen_range(-noise..=noise);
        }
    }
    let mass = log_sum(row);
    for x in row.iter_mut() {
        *x -= mass;
    }
}

/// Full token ids of the planted sequence under the standard vocabulary.
pub fn planted_token_ids(spec: &SyntheticSpec) -> Vec<TokenId> {
    spec.planted_sequence.iter().map(|&i| 4 + i).collect()
}

/// Lattice that emits the planted sequence over `frames_per_token` frames
/// per token (with a blank frame between repeats), a trie scorer biased
/// toward the sequence, and the reference string.
pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticTask {
    assert!(spec.vocab_size >= 1, "need at least one regular token");
    assert!(spec.frames_per_token >= 1, "need at least one frame per token");
    for &i in &spec.planted_sequence {
        assert!(i < spec.vocab_size, "planted index {i} out of range");
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let vocab = Vocabulary::standard(spec.vocab_size);
    let v = vocab.size();
    let planted = planted_token_ids(spec);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<TokenId> = None;
    for &tok in &planted {
        if prev == Some(tok) {
            rows.push(peaked_row(v, vocab.blank_id()));
        }
        for _ in 0..spec.frames_per_token {
            rows.push(peaked_row(v, tok));
        }
        prev = Some(tok);
    }
    for _ in 0..spec.trailing_blank_frames {
        rows.push(peaked_row(v, vocab.blank_id()));
    }
    for row in &mut rows {
        perturb(row, spec.noise_logp, &mut rng);
    }
    let lattice = PosteriorLattice::new(vocab.clone(), rows, None).unwrap();

    // Trie: each planted prefix points at the next token with a moderate
    // amount of end mass, the completed sequence points at eos, and the
    // backoff is only mildly end-biased. Off-script continuations must not
    // look terminally attractive, or aggressive commit rules would chase
    // them mid-utterance.
    let next_row = |next: TokenId| {
        let rest = (0.04 / (v - 2) as f64).ln();
        let mut row = vec![rest; v];
        row[next] = 0.90f64.ln();
        row[vocab.eos_id()] = 0.06f64.ln();
        row
    };
    let backoff = {
        let rest = (0.50 / (v - 1) as f64).ln();
        let mut row = vec![rest; v];
        row[vocab.eos_id()] = 0.50f64.ln();
        row
    };
    let mut entries = Vec::new();
    for i in 0..planted.len() {
        entries.push((planted[..i].to_vec(), next_row(planted[i])));
    }
    entries.push((planted.clone(), peaked_row(v, vocab.eos_id())));
    let scorer = TrieScorer::new(vocab.clone(), entries, backoff).unwrap();

    let reference = vocab.render(&planted);
    SyntheticTask {
        lattice,
        scorer,
        reference,
    }
}

/// Joint table planting the same sequence for transducer decoding: token u
/// becomes dominant once `u * frames_per_token` frames have been consumed,
/// and everything past the sequence is blank-dominant. Control symbols get
/// zero emission mass, so searches can only produce regular tokens. Returns
/// the scorer, the total frame count it is shaped for, and the reference
/// string.
pub fn generate_synthetic_joint(spec: &SyntheticSpec) -> (TableJointScorer, usize, String) {
    assert!(spec.vocab_size >= 1);
    let vocab = Vocabulary::standard(spec.vocab_size);
    let v = vocab.size();
    let width = v + 1; // joint rows append blank as the last column
    let planted = planted_token_ids(spec);
    let t_len = spec.frames_per_token * planted.len() + spec.trailing_blank_frames;
    let blank_col = width - 1;

    // Spread the non-peak mass over regular tokens plus the blank column.
    let joint_row = |peak_col: usize| {
        let spread_cols = spec.vocab_size + 1;
        let rest = ((1.0 - PEAK) / (spread_cols - 1).max(1) as f64).ln();
        let mut row = vec![crate::logmath::LOG_ZERO; width];
        for cell in &mut row[4..v] {
            *cell = rest;
        }
        row[blank_col] = rest;
        row[peak_col] = PEAK.ln();
        row
    };

    let mut rows = Vec::new();
    for t in 0..t_len {
        for (u, &tok) in planted.iter().enumerate() {
            let row = if t >= u * spec.frames_per_token {
                joint_row(tok)
            } else {
                joint_row(blank_col)
            };
            rows.push((t, u, row));
        }
    }
    let default = joint_row(blank_col);
    let scorer = TableJointScorer::new(planted.len().max(1), rows, default, None).unwrap();
    let reference = vocab.render(&planted);
    (scorer, t_len.max(1), reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ctc_greedy;
    use crate::lattice::write_lattice_text;
    use crate::scorers::write_trie_scorer;

    #[test]
    fn noise_free_greedy_recovers_planted_sequence() {
        let spec = SyntheticSpec {
            vocab_size: 3,
            planted_sequence: vec![0, 1, 1, 2],
            frames_per_token: 2,
            ..SyntheticSpec::default()
        };
        let task = generate_synthetic(&spec);
        assert_eq!(ctc_greedy(&task.lattice), planted_token_ids(&spec));
        assert_eq!(task.reference, "a b b c");
    }

    #[test]
    fn fixed_seed_fixtures_are_byte_identical() {
        let spec = SyntheticSpec {
            noise_logp: 0.5,
            seed: 99,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec);
        let b = generate_synthetic(&spec);
        assert_eq!(
            write_lattice_text(&a.lattice).unwrap(),
            write_lattice_text(&b.lattice).unwrap()
        );
        assert_eq!(
            write_trie_scorer(&a.scorer).unwrap(),
            write_trie_scorer(&b.scorer).unwrap()
        );
        assert_eq!(a.reference, b.reference);
    }

    #[test]
    fn noisy_lattices_stay_normalized() {
        let spec = SyntheticSpec {
            noise_logp: 1.5,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let task = generate_synthetic(&spec);
        assert!(crate::lattice::validate_lattice(&task.lattice).is_ok());
    }

    #[test]
    fn every_engine_recovers_the_planted_sequence_at_noise_zero() {
        use crate::search::{label_sync_search, time_sync_search, BeamConfig};
        use crate::transducer::{tsd_search, TransducerConfig};
        for seed in 0..5u64 {
            let spec = SyntheticSpec {
                vocab_size: 3,
                planted_sequence: vec![(seed % 3) as usize, ((seed + 1) % 3) as usize, 2],
                frames_per_token: 3,
                noise_logp: 0.0,
                seed,
                trailing_blank_frames: 1,
            };
            let task = generate_synthetic(&spec);
            let planted = planted_token_ids(&spec);
            let config = BeamConfig {
                beam_size: 8,
                nbest: 1,
                end_detect: None,
                ..BeamConfig::default()
            };
            let label = label_sync_search(&task.lattice, &task.scorer, &config).unwrap();
            assert_eq!(label.top().unwrap().tokens, planted, "label seed {seed}");
            let time = time_sync_search(&task.lattice, &task.scorer, &config).unwrap();
            assert_eq!(time.top().unwrap().tokens, planted, "time seed {seed}");
            let (joint, t_len, _) = generate_synthetic_joint(&spec);
            let tsd = tsd_search(t_len, &joint, &TransducerConfig::default()).unwrap();
            assert_eq!(tsd.top().unwrap().tokens, planted, "tsd seed {seed}");
        }
    }

    #[test]
    fn generated_scorers_pass_the_conformance_suite() {
        let spec = SyntheticSpec::default();
        let task = generate_synthetic(&spec);
        let planted = planted_token_ids(&spec);
        let probes = vec![vec![], planted[..1].to_vec(), planted.clone(), vec![9, 9]];
        crate::scorers::check_prefix_scorer(&task.scorer, &probes, 7).unwrap();
        let (joint, t_len, _) = generate_synthetic_joint(&spec);
        let t_probes: Vec<usize> = (0..t_len).collect();
        crate::scorers::check_joint_scorer(&joint, &t_probes, &[0, 1, 5, 40]).unwrap();
    }

    #[test]
    fn joint_table_plants_one_token_per_window() {
        let spec = SyntheticSpec {
            vocab_size: 3,
            planted_sequence: vec![0, 2, 1],
            frames_per_token: 2,
            ..SyntheticSpec::default()
        };
        let (scorer, t_len, reference) = generate_synthetic_joint(&spec);
        assert_eq!(t_len, 6);
        assert_eq!(reference, "a c b");
        // At (t=0, u=0) the first planted token dominates.
        let dist = crate::scorers::JointScorer::score_joint(&scorer, 0, 0, &[]).unwrap();
        let argmax = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 4); // token `a`
    }
}
