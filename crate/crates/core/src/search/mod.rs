//! Offline beam searches over a posterior lattice fused with a prefix
//! scorer: label-synchronous joint decoding, time-synchronous (CTC-primary)
//! decoding, and the two-stage multi-decoder pipeline.
//!
//! Combined scores interpolate the two sources as
//! `ctc_weight * ctc + (1 - ctc_weight) * attention + length_bonus * len`.
//! Ranking everywhere uses [`crate::hyp::cmp_ranked`]: ties break toward the
//! shorter token sequence, then lexicographic ids, so results are
//! deterministic and oracle-comparable.

mod label_sync;
mod multi;
mod time_sync;

pub use label_sync::label_sync_search;
pub(crate) use label_sync::label_sync_core;
pub use multi::{multi_decoder_search, StageTwo};
pub use time_sync::time_sync_search;
pub(crate) use time_sync::{rank_terminal, TimeSyncBeam};

use thiserror::Error;

use crate::ctc::{CtcError, EndDetectConfig};

/// Shared beam-search knobs.
#[derive(Clone, Debug)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Interpolation weight on the CTC score, in [0, 1].
    pub ctc_weight: f64,
    /// Additive bonus (nats) per emitted token.
    pub length_bonus: f64,
    /// Maximum output length as a fraction of the frame count.
    pub max_len_ratio: f64,
    /// Entries to return; at most `beam_size`.
    pub nbest: usize,
    /// Rank finished hypotheses by score / max(len, 1).
    pub length_normalize: bool,
    /// Stopping rule for label-synchronous search; `None` disables it.
    pub end_detect: Option<EndDetectConfig>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 8,
            ctc_weight: 0.3,
            length_bonus: 0.0,
            max_len_ratio: 1.0,
            nbest: 1,
            length_normalize: false,
            end_detect: Some(EndDetectConfig::default()),
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.beam_size == 0 {
            return Err(SearchError::Config("beam_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(SearchError::Config(format!(
                "ctc_weight {} outside [0, 1]",
                self.ctc_weight
            )));
        }
        if self.nbest == 0 || self.nbest > self.beam_size {
            return Err(SearchError::Config(format!(
                "nbest {} must be in 1..=beam_size ({})",
                self.nbest, self.beam_size
            )));
        }
        Ok(())
    }

    pub(crate) fn max_len(&self, frames: usize) -> usize {
        (self.max_len_ratio * frames as f64).floor() as usize
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("lattice has no frames")]
    EmptyLattice,
    #[error("scorer covers {scorer} symbols but lattice vocab has {lattice}")]
    VocabMismatch { scorer: usize, lattice: usize },
    #[error("invalid search config: {0}")]
    Config(String),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<SearchError>,
    },
}

impl SearchError {
    pub(crate) fn in_stage(self, stage: u8) -> SearchError {
        SearchError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
