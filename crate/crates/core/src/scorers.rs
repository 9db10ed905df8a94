//! Conditional-score contracts standing in for attention decoders and
//! transducer joint networks, with deterministic table-driven
//! implementations.
//!
//! Scorers are deterministic by contract so that every search result is
//! reproducible and oracle-comparable; they are immutable after load and
//! safe to share across concurrent sessions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::CoreError;
use crate::logmath::log_sum;
use crate::vocab::{TokenId, Vocabulary};

/// Tolerance on a stored distribution's log-mass.
pub const DIST_MASS_TOL: f64 = 1e-4;

/// Conventional prefix-length cap for joint tables built without an
/// explicit one; past it the blank-dominant default row applies, which
/// pressures searches to terminate.
pub const DEFAULT_U_MAX: usize = 32;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("frame index {t} out of range for source length {len}")]
    FrameOutOfRange { t: usize, len: usize },
}

/// Conditional next-token log-distribution given a committed token prefix
/// and the number of source frames visible. Implementations must be
/// deterministic and stateless across calls, and every returned vector must
/// log-sum-exp to 0 within [`DIST_MASS_TOL`].
pub trait PrefixScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Log-distribution over the vocabulary. `prefix` contains no blank id.
    fn score_prefix(&self, prefix: &[TokenId], frames_visible: usize) -> Vec<f64>;
}

/// Log-distribution over the vocabulary plus blank, indexed by source frame
/// and target prefix; the blank score occupies the final column
/// (index `vocab_size()`).
pub trait JointScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Declared source coverage; `None` means any frame index is answerable.
    fn source_len(&self) -> Option<usize>;

    fn score_joint(&self, t: usize, u: usize, prefix: &[TokenId]) -> Result<Vec<f64>, ScorerError>;

    fn blank_col(&self) -> usize {
        self.vocab_size()
    }
}

/// Table-driven [`PrefixScorer`]: exact-match lookup on the full prefix,
/// falling back to a default distribution for unseen prefixes.
#[derive(Clone, Debug)]
pub struct TrieScorer {
    vocab: Vocabulary,
    entries: HashMap<Vec<TokenId>, Vec<f64>>,
    backoff: Vec<f64>,
}

impl TrieScorer {
    pub fn new(
        vocab: Vocabulary,
        entries: Vec<(Vec<TokenId>, Vec<f64>)>,
        backoff: Vec<f64>,
    ) -> Result<Self, CoreError> {
        let v = vocab.size();
        check_dist("backoff", &backoff, v)?;
        let mut map = HashMap::with_capacity(entries.len());
        for (prefix, dist) in entries {
            check_dist(&format!("entry for prefix {prefix:?}"), &dist, v)?;
            for &id in &prefix {
                if id >= v {
                    return Err(CoreError::Dimension(format!(
                        "entry prefix {prefix:?}: token id {id} out of range for vocab size {v}"
                    )));
                }
            }
            map.insert(prefix, dist);
        }
        Ok(TrieScorer {
            vocab,
            entries: map,
            backoff,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl PrefixScorer for TrieScorer {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn score_prefix(&self, prefix: &[TokenId], _frames_visible: usize) -> Vec<f64> {
        self.entries
            .get(prefix)
            .unwrap_or(&self.backoff)
            .clone()
    }
}

/// Table-driven [`JointScorer`]: rows indexed by `(t, min(u, u_max))`, with
/// a blank-dominant default row for anything not stored.
#[derive(Clone, Debug)]
pub struct TableJointScorer {
    u_max: usize,
    rows: HashMap<(usize, usize), Vec<f64>>,
    default: Vec<f64>,
    source_len: Option<usize>,
}

impl TableJointScorer {
    pub fn new(
        u_max: usize,
        rows: Vec<(usize, usize, Vec<f64>)>,
        default: Vec<f64>,
        source_len: Option<usize>,
    ) -> Result<Self, CoreError> {
        if default.len() < 2 {
            return Err(CoreError::Dimension(
                "default row must cover at least one token plus blank".into(),
            ));
        }
        let width = default.len();
        check_dist("default", &default, width)?;
        let mut map = HashMap::with_capacity(rows.len());
        for (t, u, dist) in rows {
            check_dist(&format!("row (t={t}, u={u})"), &dist, width)?;
            map.insert((t, u), dist);
        }
        Ok(TableJointScorer {
            u_max,
            rows: map,
            default,
            source_len,
        })
    }

    pub fn u_max(&self) -> usize {
        self.u_max
    }
}

impl JointScorer for TableJointScorer {
    fn vocab_size(&self) -> usize {
        self.default.len() - 1
    }

    fn source_len(&self) -> Option<usize> {
        self.source_len
    }

    fn score_joint(&self, t: usize, u: usize, _prefix: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        if let Some(len) = self.source_len {
            if t >= len {
                return Err(ScorerError::FrameOutOfRange { t, len });
            }
        }
        let key = (t, u.min(self.u_max));
        Ok(self.rows.get(&key).unwrap_or(&self.default).clone())
    }
}

fn check_dist(what: &str, dist: &[f64], width: usize) -> Result<(), CoreError> {
    if dist.len() != width {
        return Err(CoreError::Dimension(format!(
            "{what}: {} values, expected {width}",
            dist.len()
        )));
    }
    let mass = log_sum(dist);
    if mass.abs() > DIST_MASS_TOL {
        return Err(CoreError::Parse(format!(
            "{what}: distribution log-mass {mass:.3e} outside ±{DIST_MASS_TOL:.0e}"
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrieFile {
    vocab_ref: Vocabulary,
    backoff: Vec<f64>,
    entries: Vec<TrieEntry>,
}

#[derive(Serialize, Deserialize)]
struct TrieEntry {
    prefix: Vec<TokenId>,
    dist: Vec<f64>,
}

pub fn load_trie_scorer(path: impl AsRef<Path>) -> Result<TrieScorer, CoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    read_trie_scorer(&bytes)
}

pub fn read_trie_scorer(bytes: &[u8]) -> Result<TrieScorer, CoreError> {
    let file: TrieFile = serde_json::from_slice(bytes)
        .map_err(|e| CoreError::Parse(format!("trie scorer json: {e}")))?;
    TrieScorer::new(
        file.vocab_ref,
        file.entries.into_iter().map(|e| (e.prefix, e.dist)).collect(),
        file.backoff,
    )
}

pub fn save_trie_scorer(scorer: &TrieScorer, path: impl AsRef<Path>) -> Result<(), CoreError> {
    let path = path.as_ref();
    fs::write(path, write_trie_scorer(scorer)?).map_err(|e| CoreError::io(path, e))
}

pub fn write_trie_scorer(scorer: &TrieScorer) -> Result<Vec<u8>, CoreError> {
    // Entries sorted by prefix so the file is byte-deterministic.
    let mut entries: Vec<TrieEntry> = scorer
        .entries
        .iter()
        .map(|(prefix, dist)| TrieEntry {
            prefix: prefix.clone(),
            dist: dist.clone(),
        })
        .collect();
    entries.sort_by(|a, b| a.prefix.cmp(&b.prefix));
    let file = TrieFile {
        vocab_ref: scorer.vocab.clone(),
        backoff: scorer.backoff.clone(),
        entries,
    };
    serde_json::to_vec(&file).map_err(|e| CoreError::Parse(format!("trie scorer json: {e}")))
}

#[derive(Serialize, Deserialize)]
struct JointFile {
    u_max: usize,
    rows: Vec<JointRow>,
    default: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_len: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct JointRow {
    t: usize,
    u: usize,
    dist: Vec<f64>,
}

pub fn load_joint_scorer(path: impl AsRef<Path>) -> Result<TableJointScorer, CoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    read_joint_scorer(&bytes)
}

pub fn read_joint_scorer(bytes: &[u8]) -> Result<TableJointScorer, CoreError> {
    let file: JointFile = serde_json::from_slice(bytes)
        .map_err(|e| CoreError::Parse(format!("joint scorer json: {e}")))?;
    TableJointScorer::new(
        file.u_max,
        file.rows.into_iter().map(|r| (r.t, r.u, r.dist)).collect(),
        file.default,
        file.source_len,
    )
}

pub fn save_joint_scorer(scorer: &TableJointScorer, path: impl AsRef<Path>) -> Result<(), CoreError> {
    let path = path.as_ref();
    fs::write(path, write_joint_scorer(scorer)?).map_err(|e| CoreError::io(path, e))
}

pub fn write_joint_scorer(scorer: &TableJointScorer) -> Result<Vec<u8>, CoreError> {
    let mut rows: Vec<JointRow> = scorer
        .rows
        .iter()
        .map(|(&(t, u), dist)| JointRow {
            t,
            u,
            dist: dist.clone(),
        })
        .collect();
    rows.sort_by_key(|r| (r.t, r.u));
    let file = JointFile {
        u_max: scorer.u_max,
        rows,
        default: scorer.default.clone(),
        source_len: scorer.source_len,
    };
    serde_json::to_vec(&file).map_err(|e| CoreError::Parse(format!("joint scorer json: {e}")))
}

/// Why a scorer failed the contract conformance checks.
#[derive(Debug, Error)]
pub enum ConformanceError {
    #[error("non-deterministic output for prefix {prefix:?}")]
    NonDeterministic { prefix: Vec<TokenId> },
    #[error("distribution for {context} has log-mass {mass:.3e} outside tolerance")]
    Unnormalized { context: String, mass: f64 },
    #[error("bounded scorer accepted out-of-range frame {t}")]
    MissingDomainError { t: usize },
    #[error("scorer error during probe: {0}")]
    Scorer(#[from] ScorerError),
}

/// Contract conformance for any [`PrefixScorer`]: determinism and
/// normalization over the given probe prefixes.
pub fn check_prefix_scorer(
    scorer: &dyn PrefixScorer,
    probes: &[Vec<TokenId>],
    frames_visible: usize,
) -> Result<(), ConformanceError> {
    for prefix in probes {
        let first = scorer.score_prefix(prefix, frames_visible);
        let second = scorer.score_prefix(prefix, frames_visible);
        if first != second {
            return Err(ConformanceError::NonDeterministic {
                prefix: prefix.clone(),
            });
        }
        let mass = log_sum(&first);
        if mass.abs() > DIST_MASS_TOL {
            return Err(ConformanceError::Unnormalized {
                context: format!("prefix {prefix:?}"),
                mass,
            });
        }
    }
    Ok(())
}

/// Contract conformance for any [`JointScorer`]: determinism, normalization
/// over a (t, u) probe grid, and the domain error for bounded scorers.
pub fn check_joint_scorer(
    scorer: &dyn JointScorer,
    t_probes: &[usize],
    u_probes: &[usize],
) -> Result<(), ConformanceError> {
    for &t in t_probes {
        for &u in u_probes {
            let first = scorer.score_joint(t, u, &[])?;
            let second = scorer.score_joint(t, u, &[])?;
            if first != second {
                return Err(ConformanceError::NonDeterministic { prefix: vec![] });
            }
            let mass = log_sum(&first);
            if mass.abs() > DIST_MASS_TOL {
                return Err(ConformanceError::Unnormalized {
                    context: format!("(t={t}, u={u})"),
                    mass,
                });
            }
        }
    }
    if let Some(len) = scorer.source_len() {
        if scorer.score_joint(len, 0, &[]).is_ok() {
            return Err(ConformanceError::MissingDomainError { t: len });
        }
    }
    Ok(())
}
