//! Synthetic-task generation and brute-force oracles.
//!
//! The oracles are reference implementations: every saturated-beam agreement
//! property in the search and transducer modules is checked against
//! [`exhaustive_oracle`] and [`transducer_oracle`]. The generators produce
//! deterministic fixtures from a seed (ChaCha12, portable across platforms).

pub mod oracle;
pub mod rand_instance;
pub mod synth;

pub use oracle::{
    exhaustive_oracle, transducer_oracle, transducer_total_mass, OracleEntry, OracleError,
    OracleRanking,
};
pub use synth::{generate_synthetic, generate_synthetic_joint, SyntheticSpec, SyntheticTask};
