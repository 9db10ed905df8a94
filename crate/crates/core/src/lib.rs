//! Beam-search decoding and evaluation for speech-translation posterior
//! lattices.
//!
//! The crate operates on serialized score sources — frame-level posterior
//! lattices, table-driven prefix scorers, and transducer joint tables — so
//! that every search algorithm can be checked against exhaustive oracles at
//! small scale. It provides:
//!
//! - CTC dynamic programming: full-sequence likelihood, incremental prefix
//!   scoring, greedy collapse, and end detection ([`ctc`]).
//! - Offline beam searches: label-synchronous and time-synchronous joint
//!   CTC/attention decoding, and a two-stage multi-decoder pipeline
//!   ([`search`]).
//! - Transducer decoding: greedy, Graves, time-synchronous, and
//!   alignment-synchronous beam search ([`transducer`]).
//! - Blockwise incremental decoding with stable-prefix commitment and
//!   READ/WRITE event logging ([`streaming`]).
//! - Minimum Bayes risk ranking over pooled n-best lists ([`ensemble`]).
//! - Corpus BLEU and Average Lagging scoring ([`metrics`]).
//! - Synthetic fixtures and brute-force oracles ([`testkit`]), and the
//!   `stbeam` command-line driver ([`cli`]).

pub mod cli;
pub mod ctc;
pub mod ensemble;
pub mod error;
pub mod hyp;
pub mod lattice;
pub mod logmath;
pub mod metrics;
pub mod scorers;
pub mod search;
pub mod streaming;
pub mod testkit;
pub mod transducer;
pub mod vocab;

pub use error::CoreError;
pub use hyp::{CtcLogPair, Hypothesis, NBestEntry, NBestList};
pub use lattice::{load_lattice, save_lattice, validate_lattice, PosteriorLattice};
pub use logmath::{log_add, log_sum, LOG_ZERO};
pub use vocab::{TokenId, Vocabulary};
