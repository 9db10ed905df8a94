//! Blockwise incremental decoding sessions: per-block search over the
//! frames seen so far, stable-prefix commitment (hold-n or local agreement),
//! boundary detection, and a READ/WRITE event log.
//!
//! The committed prefix is write-once and append-only; every WRITE event is
//! stamped with the frames consumed at emission, which is where latency
//! records come from. A session is a single-owner mutable object: one caller
//! drives it, while distinct sessions may run in parallel over shared
//! scorers.
//!
//! Beam state is carried across blocks for the time-synchronous and
//! transducer engines; the label-synchronous engine re-extends from the
//! committed prefix each block.

use std::collections::VecDeque;
use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{end_detect, EndDetectConfig};
use crate::error::CoreError;
use crate::lattice::PosteriorLattice;
use crate::scorers::{JointScorer, PrefixScorer};
use crate::search::{label_sync_core, rank_terminal, BeamConfig, SearchError, TimeSyncBeam};
use crate::transducer::{TransducerConfig, TransducerError, TsdBeam};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid stream policy: {0}")]
    InvalidPolicy(String),
    #[error("session already finished")]
    Finished,
    #[error("block of {got} frames exceeds block_size {block_size}")]
    BlockTooLarge { got: usize, block_size: usize },
    #[error("block must contain at least one frame")]
    EmptyBlock,
    #[error("block row has {got} values, expected vocab size {want}")]
    RowWidth { got: usize, want: usize },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Transducer(#[from] TransducerError),
}

/// Which tokens of the current best hypothesis are safe to commit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommitRule {
    /// Commit everything except the last `n` tokens.
    HoldN(usize),
    /// Commit the longest common prefix of the last `k` block decodes.
    LocalAgreement(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineKind {
    LabelSync,
    TimeSync,
    TransducerTsd,
}

/// Session policy. `end_detect: None` disables boundary detection.
#[derive(Clone, Debug)]
pub struct StreamPolicy {
    pub engine: EngineKind,
    pub commit_rule: CommitRule,
    pub block_size: usize,
    pub end_detect: Option<EndDetectConfig>,
    /// Keep only the top hypothesis across block boundaries instead of the
    /// full beam.
    pub carry_top1_only: bool,
}

impl StreamPolicy {
    pub fn new(engine: EngineKind, commit_rule: CommitRule, block_size: usize) -> StreamPolicy {
        StreamPolicy {
            engine,
            commit_rule,
            block_size,
            end_detect: Some(EndDetectConfig::default()),
            carry_top1_only: false,
        }
    }

    fn validate(&self) -> Result<(), StreamError> {
        if self.block_size == 0 {
            return Err(StreamError::InvalidPolicy(
                "block_size must be at least 1".into(),
            ));
        }
        if let CommitRule::LocalAgreement(k) = self.commit_rule {
            if k == 0 {
                return Err(StreamError::InvalidPolicy(
                    "local agreement needs at least one decode".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Scorer and search configuration backing a session's engine.
pub enum EngineSetup {
    LabelSync {
        scorer: Arc<dyn PrefixScorer>,
        config: BeamConfig,
    },
    TimeSync {
        scorer: Arc<dyn PrefixScorer>,
        config: BeamConfig,
    },
    TransducerTsd {
        scorer: Arc<dyn JointScorer>,
        config: TransducerConfig,
    },
}

impl EngineSetup {
    fn kind(&self) -> EngineKind {
        match self {
            EngineSetup::LabelSync { .. } => EngineKind::LabelSync,
            EngineSetup::TimeSync { .. } => EngineKind::TimeSync,
            EngineSetup::TransducerTsd { .. } => EngineKind::TransducerTsd,
        }
    }
}

/// One entry of the session event log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StreamEvent {
    Read { frames: usize },
    Write { token: TokenId, frames_consumed: usize },
}

/// Wire form of one event-log line; tokens travel as strings.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "type")]
pub enum WireEvent {
    #[serde(rename = "READ")]
    Read { frames: usize },
    #[serde(rename = "WRITE")]
    Write { token: String, frames_consumed: usize },
}

/// Per-token source consumption at write time plus source/target lengths;
/// the input to average-lagging evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyRecord {
    /// Source frames consumed before target token i was written;
    /// non-decreasing, each at most `source_len`.
    pub delays: Vec<usize>,
    pub source_len: usize,
    pub target_len: usize,
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub tokens: Vec<TokenId>,
    pub score: f64,
}

enum EngineState {
    LabelSync {
        scorer: Arc<dyn PrefixScorer>,
        config: BeamConfig,
        /// Diagnostics from the most recent per-block search.
        last: Option<LabelSnapshot>,
    },
    TimeSync {
        scorer: Arc<dyn PrefixScorer>,
        config: BeamConfig,
        beam: TimeSyncBeam,
    },
    TransducerTsd {
        scorer: Arc<dyn JointScorer>,
        config: TransducerConfig,
        beam: TsdBeam,
    },
}

struct LabelSnapshot {
    best_tokens: Vec<TokenId>,
    best_score: f64,
    best_finished: Option<f64>,
    best_live: Option<f64>,
}

/// Incremental decoding state over one utterance.
pub struct StreamSession {
    vocab: Vocabulary,
    policy: StreamPolicy,
    engine: EngineState,
    rows: Vec<Vec<f64>>,
    frames_consumed: usize,
    committed: Vec<TokenId>,
    write_delays: Vec<usize>,
    events: Vec<StreamEvent>,
    recent_bests: VecDeque<Vec<TokenId>>,
    finished: bool,
}

/// Open an empty session: zero frames consumed, nothing committed, no
/// events. The policy's engine must match the setup.
pub fn open_session(
    vocab: Vocabulary,
    policy: StreamPolicy,
    setup: EngineSetup,
) -> Result<StreamSession, StreamError> {
    policy.validate()?;
    if policy.engine != setup.kind() {
        return Err(StreamError::InvalidPolicy(format!(
            "policy engine {:?} does not match the provided setup",
            policy.engine
        )));
    }
    let engine = match setup {
        EngineSetup::LabelSync { scorer, config } => {
            config.validate()?;
            EngineState::LabelSync {
                scorer,
                config,
                last: None,
            }
        }
        EngineSetup::TimeSync { scorer, config } => {
            config.validate()?;
            let beam = TimeSyncBeam::new(&config);
            EngineState::TimeSync {
                scorer,
                config,
                beam,
            }
        }
        EngineSetup::TransducerTsd { scorer, config } => {
            config.validate()?;
            EngineState::TransducerTsd {
                scorer,
                config,
                beam: TsdBeam::new(),
            }
        }
    };
    Ok(StreamSession {
        vocab,
        policy,
        engine,
        rows: Vec::new(),
        frames_consumed: 0,
        committed: Vec::new(),
        write_delays: Vec::new(),
        events: Vec::new(),
        recent_bests: VecDeque::new(),
        finished: false,
    })
}

impl StreamSession {
    pub fn frames_consumed(&self) -> usize {
        self.frames_consumed
    }

    pub fn committed(&self) -> &[TokenId] {
        &self.committed
    }

    pub fn events(&self) -> &[StreamEvent] {
        &self.events
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Feed the next encoder block (frames appended to everything seen so
    /// far), run the engine restricted to hypotheses extending the committed
    /// prefix, prune to the surviving beam, and emit the tokens the commit
    /// rule declares stable. Returns the tokens emitted by this call.
    pub fn process_block(&mut self, block: &[Vec<f64>]) -> Result<Vec<TokenId>, StreamError> {
        if self.finished {
            return Err(StreamError::Finished);
        }
        if block.is_empty() {
            return Err(StreamError::EmptyBlock);
        }
        if block.len() > self.policy.block_size {
            return Err(StreamError::BlockTooLarge {
                got: block.len(),
                block_size: self.policy.block_size,
            });
        }
        for row in block {
            if row.len() != self.vocab.size() {
                return Err(StreamError::RowWidth {
                    got: row.len(),
                    want: self.vocab.size(),
                });
            }
        }

        self.events.push(StreamEvent::Read {
            frames: block.len(),
        });
        self.frames_consumed += block.len();
        self.rows.extend(block.iter().cloned());

        self.advance_engine(block.len())?;

        let best = self.best_tokens();
        self.recent_bests.push_back(best.clone());
        let keep = match self.policy.commit_rule {
            CommitRule::LocalAgreement(k) => k,
            CommitRule::HoldN(_) => 1,
        };
        while self.recent_bests.len() > keep {
            self.recent_bests.pop_front();
        }

        let stable = self.stable_prefix(&best);
        let emitted = self.commit(&stable);
        Ok(emitted)
    }

    fn advance_engine(&mut self, new_frames: usize) -> Result<(), StreamError> {
        match &mut self.engine {
            EngineState::LabelSync {
                scorer,
                config,
                last,
            } => {
                let lattice = PosteriorLattice::new(self.vocab.clone(), self.rows.clone(), None)
                    .expect("rows were width-checked");
                let outcome = label_sync_core(&lattice, scorer.as_ref(), config, &self.committed)?;
                let top = outcome
                    .nbest
                    .top()
                    .expect("label-sync yields at least one entry");
                *last = Some(LabelSnapshot {
                    best_tokens: top.tokens.clone(),
                    best_score: top.combined_logp,
                    best_finished: outcome.best_finished,
                    best_live: outcome.best_live,
                });
            }
            EngineState::TimeSync { scorer, beam, .. } => {
                let start = self.rows.len() - new_frames;
                for row in &self.rows[start..] {
                    beam.feed(row, &self.vocab, scorer.as_ref());
                }
                if self.policy.carry_top1_only {
                    beam.keep_top1();
                }
            }
            EngineState::TransducerTsd {
                scorer,
                config,
                beam,
            } => {
                for _ in 0..new_frames {
                    beam.feed(scorer.as_ref(), config)?;
                }
                if self.policy.carry_top1_only {
                    beam.keep_top1(config);
                }
            }
        }
        Ok(())
    }

    /// Current best hypothesis under each engine's terminal ranking, so a
    /// session closed right now agrees with the offline search.
    fn best_tokens(&self) -> Vec<TokenId> {
        match &self.engine {
            EngineState::LabelSync { last, .. } => last
                .as_ref()
                .map(|s| s.best_tokens.clone())
                .unwrap_or_default(),
            EngineState::TimeSync {
                scorer,
                config,
                beam,
            } => rank_terminal(beam, &self.vocab, scorer.as_ref(), config)
                .top()
                .map(|e| e.tokens.clone())
                .unwrap_or_default(),
            EngineState::TransducerTsd { config, beam, .. } => beam
                .ranked(config)
                .top()
                .map(|e| e.tokens.clone())
                .unwrap_or_default(),
        }
    }

    fn best_score(&self) -> f64 {
        match &self.engine {
            EngineState::LabelSync { last, .. } => {
                last.as_ref().map(|s| s.best_score).unwrap_or(0.0)
            }
            EngineState::TimeSync {
                scorer,
                config,
                beam,
            } => rank_terminal(beam, &self.vocab, scorer.as_ref(), config)
                .top()
                .map(|e| e.combined_logp)
                .unwrap_or(0.0),
            EngineState::TransducerTsd { config, beam, .. } => beam
                .ranked(config)
                .top()
                .map(|e| e.combined_logp)
                .unwrap_or(0.0),
        }
    }

    fn stable_prefix(&self, best: &[TokenId]) -> Vec<TokenId> {
        match self.policy.commit_rule {
            CommitRule::HoldN(n) => best[..best.len().saturating_sub(n)].to_vec(),
            CommitRule::LocalAgreement(k) => {
                if self.recent_bests.len() < k {
                    return self.committed.clone();
                }
                let mut lcp = self.recent_bests[0].clone();
                for other in self.recent_bests.iter().skip(1) {
                    let common = lcp
                        .iter()
                        .zip(other.iter())
                        .take_while(|(a, b)| a == b)
                        .count();
                    lcp.truncate(common);
                }
                lcp
            }
        }
    }

    /// Append the stable tokens beyond what is already committed, stamping
    /// WRITE events with the current consumption. Never retracts.
    fn commit(&mut self, stable: &[TokenId]) -> Vec<TokenId> {
        if !stable.starts_with(&self.committed) {
            // Engines keep beams consistent with the commitment; a diverging
            // stable prefix would mean retraction, which is forbidden.
            debug_assert!(false, "stable prefix diverged from committed");
            return Vec::new();
        }
        let emitted: Vec<TokenId> = stable[self.committed.len()..].to_vec();
        for &token in &emitted {
            self.committed.push(token);
            self.write_delays.push(self.frames_consumed);
            self.events.push(StreamEvent::Write {
                token,
                frames_consumed: self.frames_consumed,
            });
        }
        if !emitted.is_empty() {
            match &mut self.engine {
                EngineState::TimeSync { beam, .. } => beam.retain_extending(&self.committed),
                EngineState::TransducerTsd { beam, .. } => beam.retain_extending(&self.committed),
                EngineState::LabelSync { .. } => {}
            }
        }
        emitted
    }

    /// True when the engine's end condition fires on the current state:
    /// score-gap end detection over the live beam's length profile for the
    /// time-synchronous engine, finished-versus-live dominance for the
    /// label-synchronous engine, and never before source exhaustion for the
    /// transducer. A true result marks the next finalize as terminal.
    pub fn detect_boundary(&self) -> bool {
        if self.frames_consumed == 0 {
            return false;
        }
        let Some(cfg) = &self.policy.end_detect else {
            return false;
        };
        match &self.engine {
            EngineState::TimeSync { beam, .. } => end_detect(&beam.length_profile(), cfg),
            EngineState::LabelSync { last, .. } => match last {
                Some(snap) => match (snap.best_finished, snap.best_live) {
                    // Finished output dominates anything still extendable.
                    (Some(fin), Some(live)) => fin - live > -cfg.threshold_logp_gap,
                    (Some(_), None) => true,
                    _ => false,
                },
                None => false,
            },
            EngineState::TransducerTsd { .. } => false,
        }
    }

    /// Flush the remaining stable tokens (commit rule with hold 0 on the
    /// final beam), close the event log, and derive the latency record from
    /// the WRITE timestamps. The session is immutable afterwards.
    pub fn finalize(&mut self) -> Result<(DecodeResult, LatencyRecord), StreamError> {
        if self.finished {
            return Err(StreamError::Finished);
        }
        if self.frames_consumed > 0 {
            let best = self.best_tokens();
            self.commit(&best);
        }
        self.finished = true;
        let record = LatencyRecord {
            delays: self.write_delays.clone(),
            source_len: self.frames_consumed,
            target_len: self.committed.len(),
        };
        let result = DecodeResult {
            tokens: self.committed.clone(),
            score: if self.frames_consumed > 0 {
                self.best_score()
            } else {
                0.0
            },
        };
        Ok((result, record))
    }

    /// Event log in its wire form, one JSON object per line.
    pub fn event_log_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            let wire = match event {
                StreamEvent::Read { frames } => WireEvent::Read { frames: *frames },
                StreamEvent::Write {
                    token,
                    frames_consumed,
                } => WireEvent::Write {
                    token: self.vocab.token(*token).unwrap_or("<?>").to_string(),
                    frames_consumed: *frames_consumed,
                },
            };
            out.push_str(&serde_json::to_string(&wire).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

/// Parse an event log (JSON lines) back into wire events.
pub fn parse_event_log(reader: impl BufRead) -> Result<Vec<WireEvent>, CoreError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::Parse(format!("event log line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: WireEvent = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse(format!("event log line {}: {e}", i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

/// Reconstruct the latency record of a session from its event log.
pub fn latency_from_events(events: &[WireEvent]) -> LatencyRecord {
    let mut consumed = 0;
    let mut delays = Vec::new();
    for event in events {
        match event {
            WireEvent::Read { frames } => consumed += frames,
            WireEvent::Write {
                frames_consumed, ..
            } => delays.push(*frames_consumed),
        }
    }
    LatencyRecord {
        target_len: delays.len(),
        delays,
        source_len: consumed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::time_sync_search;
    use crate::testkit::{generate_synthetic, generate_synthetic_joint, SyntheticSpec};

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            vocab_size: 3,
            planted_sequence: vec![0, 1, 2, 1],
            frames_per_token: 3,
            noise_logp: 0.2,
            seed,
            trailing_blank_frames: 2,
        }
    }

    fn time_sync_session(seed: u64, block_size: usize, rule: CommitRule) -> (StreamSession, Vec<Vec<f64>>) {
        let task = generate_synthetic(&spec(seed));
        let rows: Vec<Vec<f64>> = task.lattice.rows().map(<[f64]>::to_vec).collect();
        let policy = StreamPolicy {
            end_detect: None,
            ..StreamPolicy::new(EngineKind::TimeSync, rule, block_size)
        };
        let session = open_session(
            task.lattice.vocab().clone(),
            policy,
            EngineSetup::TimeSync {
                scorer: Arc::new(task.scorer),
                config: BeamConfig {
                    beam_size: 4,
                    nbest: 1,
                    end_detect: None,
                    ..BeamConfig::default()
                },
            },
        )
        .unwrap();
        (session, rows)
    }

    #[test]
    fn open_session_starts_empty() {
        let (session, _) = time_sync_session(1, 4, CommitRule::HoldN(0));
        assert_eq!(session.frames_consumed(), 0);
        assert!(session.committed().is_empty());
        assert!(session.events().is_empty());
        assert!(!session.detect_boundary());
    }

    #[test]
    fn zero_block_size_is_rejected() {
        let task = generate_synthetic(&spec(0));
        let policy = StreamPolicy::new(EngineKind::TimeSync, CommitRule::HoldN(0), 0);
        let res = open_session(
            task.lattice.vocab().clone(),
            policy,
            EngineSetup::TimeSync {
                scorer: Arc::new(task.scorer),
                config: BeamConfig::default(),
            },
        );
        assert!(matches!(res.err(), Some(StreamError::InvalidPolicy(_))));
    }

    #[test]
    fn full_utterance_block_matches_offline_top1() {
        let task = generate_synthetic(&spec(7));
        let rows: Vec<Vec<f64>> = task.lattice.rows().map(<[f64]>::to_vec).collect();
        let config = BeamConfig {
            beam_size: 4,
            nbest: 1,
            end_detect: None,
            ..BeamConfig::default()
        };
        let offline = time_sync_search(&task.lattice, &task.scorer, &config).unwrap();
        let policy = StreamPolicy {
            end_detect: None,
            ..StreamPolicy::new(EngineKind::TimeSync, CommitRule::HoldN(0), rows.len())
        };
        let mut session = open_session(
            task.lattice.vocab().clone(),
            policy,
            EngineSetup::TimeSync {
                scorer: Arc::new(task.scorer),
                config,
            },
        )
        .unwrap();
        let mut emitted = session.process_block(&rows).unwrap();
        let (result, record) = session.finalize().unwrap();
        assert_eq!(result.tokens, offline.top().unwrap().tokens);
        // Conservation: per-block emissions plus the final flush equal the
        // final tokens.
        let flushed = result.tokens[emitted.len()..].to_vec();
        emitted.extend(flushed);
        assert_eq!(emitted, result.tokens);
        assert_eq!(record.source_len, rows.len());
        assert_eq!(record.target_len, result.tokens.len());
        // Single block: everything was written after the full read.
        assert!(record.delays.iter().all(|&d| d == rows.len()));
    }

    #[test]
    fn hold_n_withholds_last_tokens() {
        let (mut session, rows) = time_sync_session(3, 64, CommitRule::HoldN(2));
        session.process_block(&rows).unwrap();
        let best = session.best_tokens();
        assert_eq!(
            session.committed().len(),
            best.len().saturating_sub(2),
            "hold-2 must commit all but the last two tokens"
        );
    }

    #[test]
    fn local_agreement_commits_common_prefix() {
        // Drive with explicit recent bests through the private hook.
        let (mut session, _) = time_sync_session(5, 8, CommitRule::LocalAgreement(2));
        session.recent_bests.push_back(vec![4, 5, 6]);
        session.recent_bests.push_back(vec![4, 5, 7, 8]);
        let stable = session.stable_prefix(&[4, 5, 7, 8]);
        assert_eq!(stable, vec![4, 5]);
        // With only one decode seen, nothing is stable yet.
        session.recent_bests.clear();
        session.recent_bests.push_back(vec![4, 5, 6]);
        assert_eq!(session.stable_prefix(&[4, 5, 6]), Vec::<TokenId>::new());
    }

    #[test]
    fn no_retraction_across_blocks() {
        for seed in 0..10u64 {
            let (mut session, rows) = time_sync_session(seed, 4, CommitRule::HoldN(1));
            let mut all_emitted = Vec::new();
            for block in rows.chunks(4) {
                let emitted = session.process_block(block).unwrap();
                // Already-committed tokens never change.
                assert!(session.committed().starts_with(&all_emitted));
                all_emitted.extend(emitted);
                assert_eq!(session.committed(), all_emitted.as_slice());
            }
            let (result, _) = session.finalize().unwrap();
            assert!(result.tokens.starts_with(&all_emitted));
            assert_eq!(session.committed(), result.tokens.as_slice());
        }
    }

    #[test]
    fn process_after_finalize_is_a_state_error() {
        let (mut session, rows) = time_sync_session(2, 8, CommitRule::HoldN(0));
        session.process_block(&rows[..4]).unwrap();
        session.finalize().unwrap();
        assert!(matches!(
            session.process_block(&rows[4..8]),
            Err(StreamError::Finished)
        ));
        assert!(matches!(session.finalize(), Err(StreamError::Finished)));
    }

    #[test]
    fn write_events_stamp_current_consumption() {
        let (mut session, rows) = time_sync_session(4, 3, CommitRule::HoldN(0));
        for block in rows.chunks(3) {
            session.process_block(block).unwrap();
        }
        session.finalize().unwrap();
        let mut consumed = 0;
        for event in session.events() {
            match event {
                StreamEvent::Read { frames } => consumed += frames,
                StreamEvent::Write {
                    frames_consumed, ..
                } => assert_eq!(*frames_consumed, consumed),
            }
        }
        assert_eq!(consumed, session.frames_consumed());
    }

    #[test]
    fn one_token_per_block_delays_are_block_multiples() {
        // One planted token per block: each commit lands at a block end.
        // The CTC weight is high enough that the scorer cannot talk the
        // session into committing a token before its frames arrive.
        let task = generate_synthetic(&SyntheticSpec {
            vocab_size: 3,
            planted_sequence: vec![0, 1, 2],
            frames_per_token: 4,
            noise_logp: 0.0,
            seed: 0,
            trailing_blank_frames: 0,
        });
        let rows: Vec<Vec<f64>> = task.lattice.rows().map(<[f64]>::to_vec).collect();
        let policy = StreamPolicy {
            end_detect: None,
            ..StreamPolicy::new(EngineKind::TimeSync, CommitRule::HoldN(0), 4)
        };
        let mut session = open_session(
            task.lattice.vocab().clone(),
            policy,
            EngineSetup::TimeSync {
                scorer: Arc::new(task.scorer),
                config: BeamConfig {
                    beam_size: 4,
                    nbest: 1,
                    ctc_weight: 0.6,
                    end_detect: None,
                    ..BeamConfig::default()
                },
            },
        )
        .unwrap();
        for block in rows.chunks(4) {
            session.process_block(block).unwrap();
        }
        let (result, record) = session.finalize().unwrap();
        assert_eq!(result.tokens.len(), 3);
        assert_eq!(record.delays, vec![4, 8, 12]);
    }

    #[test]
    fn event_log_round_trip_and_latency() {
        let (mut session, rows) = time_sync_session(6, 4, CommitRule::HoldN(0));
        for block in rows.chunks(4) {
            session.process_block(block).unwrap();
        }
        let (_, record) = session.finalize().unwrap();
        let jsonl = session.event_log_jsonl();
        let events = parse_event_log(std::io::Cursor::new(jsonl.as_bytes())).unwrap();
        let rebuilt = latency_from_events(&events);
        assert_eq!(rebuilt, record);
    }

    #[test]
    fn local_agreement_session_runs_end_to_end() {
        // Agreement of the last two block decodes: commits trail the best
        // hypothesis by at least one block, and nothing ever retracts.
        let task = generate_synthetic(&spec(9));
        let rows: Vec<Vec<f64>> = task.lattice.rows().map(<[f64]>::to_vec).collect();
        let policy = StreamPolicy {
            end_detect: None,
            ..StreamPolicy::new(EngineKind::TimeSync, CommitRule::LocalAgreement(2), 4)
        };
        let mut session = open_session(
            task.lattice.vocab().clone(),
            policy,
            EngineSetup::TimeSync {
                scorer: Arc::new(task.scorer),
                config: BeamConfig {
                    beam_size: 4,
                    nbest: 1,
                    end_detect: None,
                    ..BeamConfig::default()
                },
            },
        )
        .unwrap();
        let first = session.process_block(&rows[..4]).unwrap();
        assert!(first.is_empty(), "nothing stable after a single decode");
        let mut all = first;
        for block in rows[4..].chunks(4) {
            all.extend(session.process_block(block).unwrap());
            assert_eq!(session.committed(), all.as_slice());
        }
        let (result, _) = session.finalize().unwrap();
        assert!(result.tokens.starts_with(&all));
    }

    #[test]
    fn transducer_session_never_retracts() {
        let (scorer, t_len, _) = generate_synthetic_joint(&SyntheticSpec {
            vocab_size: 3,
            planted_sequence: vec![0, 1, 2, 0],
            frames_per_token: 2,
            noise_logp: 0.0,
            seed: 3,
            trailing_blank_frames: 2,
        });
        let vocab = Vocabulary::standard(3);
        let zero_row = vec![-(vocab.size() as f64).ln(); vocab.size()];
        let policy = StreamPolicy {
            end_detect: None,
            ..StreamPolicy::new(EngineKind::TransducerTsd, CommitRule::HoldN(1), 3)
        };
        let mut session = open_session(
            vocab,
            policy,
            EngineSetup::TransducerTsd {
                scorer: Arc::new(scorer),
                config: TransducerConfig::default(),
            },
        )
        .unwrap();
        let rows = vec![zero_row; t_len];
        let mut all = Vec::new();
        for block in rows.chunks(3) {
            all.extend(session.process_block(block).unwrap());
            assert_eq!(session.committed(), all.as_slice());
        }
        let (result, record) = session.finalize().unwrap();
        assert_eq!(result.tokens, vec![4, 5, 6, 4]);
        assert!(result.tokens.starts_with(&all));
        assert_eq!(record.delays.len(), result.tokens.len());
    }

    #[test]
    fn latency_ignores_token_identities() {
        // Renaming WRITE tokens leaves the reconstructed record unchanged.
        let log = concat!(
            "{\"type\":\"READ\",\"frames\":4}\n",
            "{\"type\":\"WRITE\",\"token\":\"a\",\"frames_consumed\":4}\n",
            "{\"type\":\"READ\",\"frames\":4}\n",
            "{\"type\":\"WRITE\",\"token\":\"b\",\"frames_consumed\":8}\n",
        );
        let renamed = log.replace("\"a\"", "\"zebra\"").replace("\"b\"", "\"q\"");
        let a = latency_from_events(&parse_event_log(std::io::Cursor::new(log)).unwrap());
        let b = latency_from_events(&parse_event_log(std::io::Cursor::new(renamed.as_bytes())).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn transducer_sessions_defer_boundary_to_exhaustion() {
        let (scorer, t_len, _) = generate_synthetic_joint(&SyntheticSpec {
            vocab_size: 3,
            planted_sequence: vec![0, 1],
            frames_per_token: 3,
            noise_logp: 0.0,
            seed: 0,
            trailing_blank_frames: 3,
        });
        let vocab = Vocabulary::standard(3);
        let policy = StreamPolicy::new(EngineKind::TransducerTsd, CommitRule::HoldN(0), 3);
        let mut session = open_session(
            vocab.clone(),
            policy,
            EngineSetup::TransducerTsd {
                scorer: Arc::new(scorer),
                config: TransducerConfig::default(),
            },
        )
        .unwrap();
        let zero_row = vec![-(vocab.size() as f64).ln(); vocab.size()];
        for _ in 0..(t_len / 3) {
            session.process_block(&vec![zero_row.clone(); 3]).unwrap();
            assert!(!session.detect_boundary());
        }
        let (result, _) = session.finalize().unwrap();
        assert_eq!(result.tokens, vec![4, 5]);
    }
}
