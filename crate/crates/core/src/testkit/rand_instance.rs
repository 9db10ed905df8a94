//! Seeded random decode problems for property suites: normalized random
//! lattices, trie scorers with random tables, and blank-bounded joint
//! tables.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::lattice::PosteriorLattice;
use crate::scorers::{TableJointScorer, TrieScorer};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Copy, Debug)]
pub struct InstanceSpec {
    /// Emittable tokens beside `<unk>`.
    pub n_regular: usize,
    pub t_len: usize,
    pub seed: u64,
}

fn random_dist(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| (x / total).ln()).collect()
}

pub fn random_lattice(rng: &mut impl Rng, vocab: &Vocabulary, t_len: usize) -> PosteriorLattice {
    let rows: Vec<Vec<f64>> = (0..t_len).map(|_| random_dist(rng, vocab.size())).collect();
    PosteriorLattice::new(vocab.clone(), rows, None).unwrap()
}

/// Random trie with explicit tables for every prefix up to length 2 plus a
/// random backoff, so different prefixes genuinely score differently.
pub fn random_trie(rng: &mut impl Rng, vocab: &Vocabulary) -> TrieScorer {
    let v = vocab.size();
    let mut entries: Vec<(Vec<TokenId>, Vec<f64>)> = vec![(vec![], random_dist(rng, v))];
    let emittable = vocab.emittable_ids();
    for &a in &emittable {
        entries.push((vec![a], random_dist(rng, v)));
        for &b in &emittable {
            entries.push((vec![a, b], random_dist(rng, v)));
        }
    }
    TrieScorer::new(vocab.clone(), entries, random_dist(rng, v)).unwrap()
}

/// A lattice/scorer pair over the standard vocabulary.
pub fn random_instance(spec: &InstanceSpec) -> (PosteriorLattice, TrieScorer) {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let vocab = Vocabulary::standard(spec.n_regular);
    let lattice = random_lattice(&mut rng, &vocab, spec.t_len);
    let scorer = random_trie(&mut rng, &vocab);
    (lattice, scorer)
}

/// Random joint table over `n_tokens` plus blank: fully random rows for
/// u < u_max across every frame, and a blank-dominant default past the cap
/// so the emission mass decays geometrically.
pub fn random_joint(
    rng: &mut impl Rng,
    n_tokens: usize,
    t_len: usize,
    u_max: usize,
) -> TableJointScorer {
    let width = n_tokens + 1;
    let mut rows = Vec::new();
    for t in 0..t_len {
        for u in 0..u_max {
            rows.push((t, u, random_dist(rng, width)));
        }
    }
    // Default: blank keeps at least half the mass.
    let blank_p = rng.gen_range(0.5..0.9);
    let raw: Vec<f64> = (0..n_tokens).map(|_| rng.gen_range(0.02..1.0)).collect();
    let raw_total: f64 = raw.iter().sum();
    let mut default: Vec<f64> = raw
        .iter()
        .map(|x| (x / raw_total * (1.0 - blank_p)).ln())
        .collect();
    default.push(blank_p.ln());
    TableJointScorer::new(u_max, rows, default, None).unwrap()
}
