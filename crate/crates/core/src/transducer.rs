//! Transducer decoding over a joint scorer: greedy, Graves beam search with
//! the prefix-sum rule, time-synchronous search with a per-frame symbol cap,
//! and alignment-synchronous search.
//!
//! Duplicate hypotheses are detected by exact token sequence and merged by
//! log-sum-exp, matching the marginalization the brute-force oracle
//! computes. Pruning always uses unnormalized mass; length normalization
//! (score / max(len, 1)) applies at final ranking only. Emission delays are
//! the 0-based frame index at which each token was produced.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::hyp::{cmp_ranked, NBestEntry, NBestList};
use crate::logmath::log_add;
use crate::scorers::{JointScorer, ScorerError};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum TransducerError {
    #[error("invalid transducer config: {0}")]
    Config(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransducerVariant {
    Greedy,
    Graves,
    Tsd,
    Alsd,
}

#[derive(Clone, Debug)]
pub struct TransducerConfig {
    pub beam_size: usize,
    pub variant: TransducerVariant,
    /// Symbol emissions allowed per frame (time-synchronous and greedy).
    pub n_step: usize,
    /// Hard cap on output length.
    pub u_cap: usize,
    /// Rank final hypotheses by mass / max(len, 1).
    pub length_normalize: bool,
}

impl Default for TransducerConfig {
    fn default() -> Self {
        TransducerConfig {
            beam_size: 4,
            variant: TransducerVariant::Tsd,
            n_step: 3,
            u_cap: 256,
            length_normalize: true,
        }
    }
}

impl TransducerConfig {
    pub fn validate(&self) -> Result<(), TransducerError> {
        if self.beam_size == 0 {
            return Err(TransducerError::Config("beam_size must be at least 1".into()));
        }
        if self.n_step == 0 {
            return Err(TransducerError::Config("n_step must be at least 1".into()));
        }
        Ok(())
    }

    fn rank_score(&self, mass: f64, len: usize) -> f64 {
        if self.length_normalize {
            mass / len.max(1) as f64
        } else {
            mass
        }
    }
}

/// Beam cell: marginal mass plus the delays of its strongest single
/// contribution (kept deterministically so merges are order-independent).
#[derive(Clone, Debug)]
struct Item {
    mass: f64,
    best_single: f64,
    delays: Vec<usize>,
}

impl Item {
    fn seed() -> Item {
        Item {
            mass: 0.0,
            best_single: 0.0,
            delays: Vec::new(),
        }
    }
}

fn merge(map: &mut HashMap<Vec<TokenId>, Item>, key: Vec<TokenId>, mass: f64, delays: &[usize]) {
    match map.get_mut(&key) {
        Some(item) => {
            item.mass = log_add(item.mass, mass);
            if mass > item.best_single
                || (mass == item.best_single && delays < item.delays.as_slice())
            {
                item.best_single = mass;
                item.delays = delays.to_vec();
            }
        }
        None => {
            map.insert(
                key,
                Item {
                    mass,
                    best_single: mass,
                    delays: delays.to_vec(),
                },
            );
        }
    }
}

fn prune(map: HashMap<Vec<TokenId>, Item>, beam_size: usize) -> HashMap<Vec<TokenId>, Item> {
    if map.len() <= beam_size {
        return map;
    }
    let mut items: Vec<(Vec<TokenId>, Item)> = map.into_iter().collect();
    items.sort_by(|a, b| cmp_ranked(a.1.mass, &a.0, b.1.mass, &b.0));
    items.truncate(beam_size);
    items.into_iter().collect()
}

fn into_nbest(
    map: HashMap<Vec<TokenId>, Item>,
    config: &TransducerConfig,
    t_len: usize,
) -> NBestList {
    let entries: Vec<NBestEntry> = map
        .into_iter()
        .map(|(tokens, item)| NBestEntry {
            combined_logp: config.rank_score(item.mass, tokens.len()),
            delays: item.delays,
            finished: true,
            tokens,
        })
        .collect();
    NBestList::from_entries(entries, t_len, config.beam_size)
}

/// Greedy argmax walk plus its delays and cumulative path score.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyPath {
    pub tokens: Vec<TokenId>,
    pub delays: Vec<usize>,
    pub path_logp: f64,
}

/// At each frame emit argmax tokens until blank wins (ties go to blank) or
/// the per-frame cap is reached, then advance.
pub fn transducer_greedy(
    t_len: usize,
    scorer: &dyn JointScorer,
    config: &TransducerConfig,
) -> Result<GreedyPath, TransducerError> {
    config.validate()?;
    let blank = scorer.blank_col();
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut delays = Vec::new();
    let mut path_logp = 0.0;
    for t in 0..t_len {
        let mut emitted = 0;
        loop {
            let dist = scorer.score_joint(t, tokens.len(), &tokens)?;
            if emitted >= config.n_step || tokens.len() >= config.u_cap {
                path_logp += dist[blank];
                break;
            }
            let (best_tok, best) = dist[..blank]
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("joint rows are non-empty");
            if dist[blank] >= best {
                path_logp += dist[blank];
                break;
            }
            tokens.push(best_tok);
            delays.push(t);
            path_logp += best;
            emitted += 1;
        }
    }
    Ok(GreedyPath {
        tokens,
        delays,
        path_logp,
    })
}

/// Frame-major beam search with prefix merging: at each frame, the mass of
/// any hypothesis that is a proper prefix of another in the beam is folded
/// into the longer one through the frame's emission chain before expansion,
/// so pop order cannot drop it. Extensions toward sequences already present
/// at the frame start are skipped (the fold covered them), keeping the
/// total exactly the marginal path mass.
pub fn graves_search(
    t_len: usize,
    scorer: &dyn JointScorer,
    config: &TransducerConfig,
) -> Result<NBestList, TransducerError> {
    config.validate()?;
    let blank = scorer.blank_col();
    let v = scorer.vocab_size();
    // Generous totality bound on expansion work per frame.
    let pop_budget = config.beam_size * (config.u_cap + 2);

    let mut beam: HashMap<Vec<TokenId>, Item> = HashMap::new();
    beam.insert(Vec::new(), Item::seed());

    for t in 0..t_len {
        let mut active = beam;
        let initial: HashSet<Vec<TokenId>> = active.keys().cloned().collect();

        // Prefix-sum fold, from snapshot masses.
        let snapshot: Vec<(Vec<TokenId>, f64)> =
            active.iter().map(|(k, it)| (k.clone(), it.mass)).collect();
        for (longer, _) in snapshot.iter().filter(|(k, _)| !k.is_empty()) {
            let mut boost = f64::NEG_INFINITY;
            for (shorter, short_mass) in &snapshot {
                if shorter.len() >= longer.len() || !longer.starts_with(shorter) {
                    continue;
                }
                let mut chain = *short_mass;
                for j in shorter.len()..longer.len() {
                    chain += scorer.score_joint(t, j, &longer[..j])?[longer[j]];
                }
                boost = if boost == f64::NEG_INFINITY {
                    chain
                } else {
                    log_add(boost, chain)
                };
            }
            if boost != f64::NEG_INFINITY {
                let item = active.get_mut(longer).expect("snapshot key");
                item.mass = log_add(item.mass, boost);
            }
        }

        let mut advanced: HashMap<Vec<TokenId>, Item> = HashMap::new();
        let mut pops = 0;
        while pops < pop_budget {
            // Most probable active hypothesis.
            let Some(best_key) = active
                .iter()
                .max_by(|a, b| cmp_ranked(b.1.mass, b.0, a.1.mass, a.0))
                .map(|(k, _)| k.clone())
            else {
                break;
            };
            let best = active.remove(&best_key).unwrap();
            let better_count = advanced.values().filter(|it| it.mass > best.mass).count();
            if better_count >= config.beam_size {
                break;
            }
            pops += 1;
            let dist = scorer.score_joint(t, best_key.len(), &best_key)?;
            merge(&mut advanced, best_key.clone(), best.mass + dist[blank], &best.delays);
            if best_key.len() >= config.u_cap {
                continue;
            }
            for (k, &logp) in dist[..v].iter().enumerate() {
                let mut child = best_key.clone();
                child.push(k);
                if initial.contains(&child) {
                    continue; // covered by the prefix-sum fold
                }
                let mut delays = best.delays.clone();
                delays.push(t);
                merge(&mut active, child, best.mass + logp, &delays);
            }
        }
        beam = prune(advanced, config.beam_size);
    }
    Ok(into_nbest(beam, config, t_len))
}

/// Time-synchronous beam carried frame to frame; the streaming layer feeds
/// it one frame at a time and offline search drives it over the whole
/// source.
pub(crate) struct TsdBeam {
    map: HashMap<Vec<TokenId>, Item>,
    frames_done: usize,
}

impl TsdBeam {
    pub(crate) fn new() -> TsdBeam {
        let mut map = HashMap::new();
        map.insert(Vec::new(), Item::seed());
        TsdBeam {
            map,
            frames_done: 0,
        }
    }

    /// Consume the next source frame: up to `n_step` symbol expansion
    /// rounds, then the blank advance; duplicates merge by log-sum-exp.
    pub(crate) fn feed(
        &mut self,
        scorer: &dyn JointScorer,
        config: &TransducerConfig,
    ) -> Result<(), TransducerError> {
        let t = self.frames_done;
        let blank = scorer.blank_col();
        let v = scorer.vocab_size();
        let mut advanced: HashMap<Vec<TokenId>, Item> = HashMap::new();
        let mut cur = std::mem::take(&mut self.map);
        for round in 0..=config.n_step {
            let mut grown: HashMap<Vec<TokenId>, Item> = HashMap::new();
            for (y, item) in &cur {
                let dist = scorer.score_joint(t, y.len(), y)?;
                merge(&mut advanced, y.clone(), item.mass + dist[blank], &item.delays);
                if round < config.n_step && y.len() < config.u_cap {
                    for (k, &logp) in dist[..v].iter().enumerate() {
                        let mut child = y.clone();
                        child.push(k);
                        let mut delays = item.delays.clone();
                        delays.push(t);
                        merge(&mut grown, child, item.mass + logp, &delays);
                    }
                }
            }
            cur = prune(grown, config.beam_size);
            if cur.is_empty() {
                break;
            }
        }
        self.map = prune(advanced, config.beam_size);
        self.frames_done = t + 1;
        Ok(())
    }

    pub(crate) fn ranked(&self, config: &TransducerConfig) -> NBestList {
        into_nbest(self.map.clone(), config, self.frames_done)
    }

    pub(crate) fn retain_extending(&mut self, committed: &[TokenId]) {
        self.map.retain(|k, _| k.starts_with(committed));
    }

    pub(crate) fn keep_top1(&mut self, config: &TransducerConfig) {
        self.map = prune(std::mem::take(&mut self.map), 1.min(config.beam_size));
    }
}

/// Per frame, up to `n_step` symbol expansion rounds before the beam
/// advances; duplicates merge by log-sum-exp.
pub fn tsd_search(
    t_len: usize,
    scorer: &dyn JointScorer,
    config: &TransducerConfig,
) -> Result<NBestList, TransducerError> {
    config.validate()?;
    let mut beam = TsdBeam::new();
    for _ in 0..t_len {
        beam.feed(scorer, config)?;
    }
    Ok(beam.ranked(config))
}

/// Hypotheses indexed by alignment length t+u and expanded in synchronous
/// waves; a hypothesis completes once every source frame is consumed.
pub fn alsd_search(
    t_len: usize,
    scorer: &dyn JointScorer,
    config: &TransducerConfig,
) -> Result<NBestList, TransducerError> {
    config.validate()?;
    let blank = scorer.blank_col();
    let v = scorer.vocab_size();

    // Within one wave every entry shares t + len, so sequences key the map
    // and the consumed-frame count rides along.
    let mut wave: HashMap<Vec<TokenId>, (Item, usize)> = HashMap::new();
    wave.insert(Vec::new(), (Item::seed(), 0));
    let mut finals: HashMap<Vec<TokenId>, Item> = HashMap::new();

    for _n in 0..=(t_len + config.u_cap) {
        let mut next: HashMap<Vec<TokenId>, (Item, usize)> = HashMap::new();
        let push = |map: &mut HashMap<Vec<TokenId>, (Item, usize)>,
                        key: Vec<TokenId>,
                        at: usize,
                        mass: f64,
                        delays: &[usize]| {
            match map.get_mut(&key) {
                Some((acc, t_stored)) => {
                    debug_assert_eq!(*t_stored, at);
                    acc.mass = log_add(acc.mass, mass);
                    if mass > acc.best_single
                        || (mass == acc.best_single && delays < acc.delays.as_slice())
                    {
                        acc.best_single = mass;
                        acc.delays = delays.to_vec();
                    }
                }
                None => {
                    map.insert(
                        key,
                        (
                            Item {
                                mass,
                                best_single: mass,
                                delays: delays.to_vec(),
                            },
                            at,
                        ),
                    );
                }
            }
        };
        for (y, (item, t)) in &wave {
            if *t == t_len {
                merge(&mut finals, y.clone(), item.mass, &item.delays);
                continue;
            }
            let dist = scorer.score_joint(*t, y.len(), y)?;
            push(&mut next, y.clone(), t + 1, item.mass + dist[blank], &item.delays);
            if y.len() < config.u_cap {
                for (k, &logp) in dist[..v].iter().enumerate() {
                    let mut child = y.clone();
                    child.push(k);
                    let mut delays = item.delays.clone();
                    delays.push(*t);
                    push(&mut next, child, *t, item.mass + logp, &delays);
                }
            }
        }
        if next.len() > config.beam_size {
            let mut items: Vec<(Vec<TokenId>, (Item, usize))> = next.into_iter().collect();
            items.sort_by(|a, b| cmp_ranked(a.1 .0.mass, &a.0, b.1 .0.mass, &b.0));
            items.truncate(config.beam_size);
            next = items.into_iter().collect();
        }
        wave = next;
        if wave.is_empty() {
            break;
        }
    }
    Ok(into_nbest(finals, config, t_len))
}

/// Dispatch on the configured variant. Greedy wraps its single path in a
/// one-entry list scored by the path log-probability.
pub fn transducer_search(
    t_len: usize,
    scorer: &dyn JointScorer,
    config: &TransducerConfig,
) -> Result<NBestList, TransducerError> {
    match config.variant {
        TransducerVariant::Greedy => {
            let path = transducer_greedy(t_len, scorer, config)?;
            let entry = NBestEntry {
                combined_logp: config.rank_score(path.path_logp, path.tokens.len()),
                tokens: path.tokens,
                delays: path.delays,
                finished: true,
            };
            Ok(NBestList::from_entries(vec![entry], t_len, 1))
        }
        TransducerVariant::Graves => graves_search(t_len, scorer, config),
        TransducerVariant::Tsd => tsd_search(t_len, scorer, config),
        TransducerVariant::Alsd => alsd_search(t_len, scorer, config),
    }
}
