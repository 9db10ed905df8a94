//! The `stbeam` command-line driver: offline decoding, blockwise streaming,
//! BLEU and average-lagging evaluation, MBR reranking, fixture synthesis,
//! and lattice validation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Data
//! errors print one line to stderr shaped `error[CODE]: message`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{mbr_rank_sentences, MbrConfig, MbrWeighting};
use crate::error::CoreError;
use crate::lattice::{load_lattice, save_lattice, validate_lattice, PosteriorLattice};
use crate::metrics::{average_lagging, corpus_al, corpus_bleu, Tokenizer};
use crate::scorers::{load_joint_scorer, load_trie_scorer, save_joint_scorer, save_trie_scorer};
use crate::search::{
    label_sync_search, multi_decoder_search, time_sync_search, BeamConfig, SearchError, StageTwo,
};
use crate::streaming::{
    latency_from_events, open_session, parse_event_log, CommitRule, EngineKind, EngineSetup,
    StreamError, StreamPolicy,
};
use crate::transducer::{transducer_search, TransducerConfig, TransducerError, TransducerVariant};
use crate::vocab::Vocabulary;
use crate::NBestList;

struct CliError {
    code: &'static str,
    msg: String,
}

impl CliError {
    fn new(code: &'static str, msg: impl Into<String>) -> CliError {
        CliError {
            code,
            msg: msg.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        let code = match &e {
            CoreError::Io { .. } => "IO",
            CoreError::Parse(_) => "PARSE",
            CoreError::Dimension(_) => "DIMENSION",
            CoreError::Vocab(_) => "VOCAB",
        };
        CliError::new(code, e.to_string())
    }
}

fn search_code(e: &SearchError) -> &'static str {
    match e {
        SearchError::VocabMismatch { .. } => "VOCAB",
        SearchError::EmptyLattice => "DATA",
        SearchError::Config(_) => "CONFIG",
        SearchError::Ctc(_) => "DATA",
        SearchError::Stage { source, .. } => search_code(source),
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> CliError {
        CliError::new(search_code(&e), e.to_string())
    }
}

impl From<TransducerError> for CliError {
    fn from(e: TransducerError) -> CliError {
        let code = match &e {
            TransducerError::Config(_) => "CONFIG",
            TransducerError::Scorer(_) => "DATA",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> CliError {
        let code = match &e {
            StreamError::InvalidPolicy(_) => "CONFIG",
            StreamError::Finished => "STATE",
            StreamError::Search(SearchError::VocabMismatch { .. }) => "VOCAB",
            _ => "DATA",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<crate::metrics::MetricsError> for CliError {
    fn from(e: crate::metrics::MetricsError) -> CliError {
        CliError::new("DATA", e.to_string())
    }
}

impl From<crate::ensemble::EnsembleError> for CliError {
    fn from(e: crate::ensemble::EnsembleError) -> CliError {
        CliError::new("DATA", e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "stbeam", version, about = "Beam-search decoding and evaluation over posterior lattices", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offline decoding: joint CTC/attention or transducer beam search.
    Decode(DecodeArgs),
    /// Blockwise incremental decoding with stable-prefix commitment.
    Stream(StreamArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    EvalBleu(EvalBleuArgs),
    /// Average Lagging from streaming event logs.
    EvalAl(EvalAlArgs),
    /// Minimum-Bayes-risk rerank of pooled n-best files.
    Mbr(MbrArgs),
    /// Generate a synthetic lattice/scorer/reference fixture.
    Synth(SynthArgs),
    /// Check lattice invariants and report violations.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecodeMode {
    JointLabel,
    JointTime,
    MultiDecoder,
    TransducerGreedy,
    TransducerGraves,
    TransducerTsd,
    TransducerAlsd,
}

#[derive(Args)]
struct BeamFlags {
    /// Beam width.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    beam: u32,
    /// CTC interpolation weight in [0, 1].
    #[arg(long, default_value_t = 0.3)]
    ctc_weight: f64,
    /// Additive bonus (nats) per output token.
    #[arg(long, default_value_t = 0.0)]
    length_bonus: f64,
    /// Maximum output length as a fraction of the frame count.
    #[arg(long, default_value_t = 1.0)]
    max_len_ratio: f64,
    /// Entries to emit per utterance.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    nbest: u32,
    /// Rank finished hypotheses by score / max(len, 1).
    #[arg(long, default_value_t = false)]
    length_normalize: bool,
    /// Disable end detection in label-synchronous search.
    #[arg(long, default_value_t = false)]
    no_end_detect: bool,
}

impl BeamFlags {
    fn to_config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam as usize,
            ctc_weight: self.ctc_weight,
            length_bonus: self.length_bonus,
            max_len_ratio: self.max_len_ratio,
            nbest: (self.nbest as usize).min(self.beam as usize),
            length_normalize: self.length_normalize,
            end_detect: if self.no_end_detect {
                None
            } else {
                Some(crate::ctc::EndDetectConfig::default())
            },
        }
    }
}

#[derive(Args)]
struct TransducerFlags {
    /// Symbol emissions allowed per frame.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    n_step: u32,
    /// Maximum output length.
    #[arg(long, default_value_t = 256)]
    u_cap: u32,
    /// Disable length normalization at final ranking.
    #[arg(long, default_value_t = false)]
    no_length_normalize: bool,
}

impl TransducerFlags {
    fn to_config(&self, beam: u32, variant: TransducerVariant) -> TransducerConfig {
        TransducerConfig {
            beam_size: beam as usize,
            variant,
            n_step: self.n_step as usize,
            u_cap: self.u_cap as usize,
            length_normalize: !self.no_length_normalize,
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    mode: DecodeMode,
    /// One or more lattice files; utterances decode in input order.
    #[arg(long, required = true, num_args = 1..)]
    lattice: Vec<PathBuf>,
    /// Prefix scorer (joint modes) or joint table (transducer modes).
    #[arg(long)]
    scorer: PathBuf,
    /// Stage-2 lattice for multi-decoder mode.
    #[arg(long)]
    stage2_lattice: Option<PathBuf>,
    /// Stage-2 scorer for multi-decoder mode.
    #[arg(long)]
    stage2_scorer: Option<PathBuf>,
    #[command(flatten)]
    beam_flags: BeamFlags,
    #[command(flatten)]
    transducer_flags: TransducerFlags,
    /// Write n-best lines here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StreamEngineArg {
    LabelSync,
    TimeSync,
    TransducerTsd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    HoldN,
    LocalAgreement,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    lattice: PathBuf,
    #[arg(long)]
    scorer: PathBuf,
    #[arg(long, value_enum)]
    engine: StreamEngineArg,
    /// Frames per block; defaults to the lattice's block boundaries.
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long, value_enum, default_value = "hold-n")]
    policy: PolicyArg,
    /// Tokens held back by hold-n.
    #[arg(long, default_value_t = 0)]
    n: usize,
    /// Consecutive decodes required by local agreement.
    #[arg(long, default_value_t = 2)]
    agree_k: usize,
    #[command(flatten)]
    beam_flags: BeamFlags,
    #[command(flatten)]
    transducer_flags: TransducerFlags,
    /// Disable boundary detection.
    #[arg(long, default_value_t = false)]
    no_boundary_detect: bool,
    /// Keep only the best hypothesis across block boundaries.
    #[arg(long, default_value_t = false)]
    carry_top1: bool,
    /// Event log destination (JSON lines); stdout when omitted.
    #[arg(long)]
    events_out: Option<PathBuf>,
    /// Final-result destination (JSON); stderr when omitted.
    #[arg(long)]
    final_out: Option<PathBuf>,
    /// Milliseconds per source frame for the summary.
    #[arg(long, default_value_t = 40.0)]
    frame_ms: f64,
}

#[derive(Args)]
struct EvalBleuArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
struct EvalAlArgs {
    /// One or more event-log files.
    #[arg(long, required = true, num_args = 1..)]
    events: Vec<PathBuf>,
    /// Milliseconds per source frame for second conversion.
    #[arg(long, default_value_t = 40.0)]
    frame_ms: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightingArg {
    Uniform,
    ScoreSoftmax,
}

#[derive(Args)]
struct MbrArgs {
    /// One or more n-best files (decode output format).
    #[arg(long, required = true, num_args = 1..)]
    nbest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "uniform")]
    weighting: WeightingArg,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Regular (emittable) tokens in the vocabulary.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    vocab_size: u32,
    /// Comma-separated indices into the regular token range.
    #[arg(long)]
    planted: String,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    frames_per_token: u32,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    trailing_blanks: u32,
    /// Lattice destination (`.json` for the text form, binary otherwise).
    #[arg(long)]
    out_lattice: PathBuf,
    /// Trie scorer destination (JSON).
    #[arg(long)]
    out_scorer: Option<PathBuf>,
    /// Joint table destination (JSON).
    #[arg(long)]
    out_joint: Option<PathBuf>,
    /// Reference transcript destination (text).
    #[arg(long)]
    out_ref: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    lattice: PathBuf,
}

/// Entry point used by `main`: real process arguments and streams.
pub fn run_cli_env() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    run_cli(&args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Execute a full command line. Returns the process exit code and writes
/// results to `out` / diagnostics to `err`.
pub fn run_cli(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let is_help = matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            if is_help {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = write!(err, "{e}");
            return 1;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.code, e.msg);
            2
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Decode(args) => cmd_decode(args, out, err),
        Command::Stream(args) => cmd_stream(args, out, err),
        Command::EvalBleu(args) => cmd_eval_bleu(args, out),
        Command::EvalAl(args) => cmd_eval_al(args, out),
        Command::Mbr(args) => cmd_mbr(args, out),
        Command::Synth(args) => cmd_synth(args, err),
        Command::Validate(args) => cmd_validate(args, out, err),
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::from(CoreError::io(path, e)))
}

fn write_output(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::from(CoreError::io(path, e)))
}

#[derive(Serialize)]
struct NBestLine {
    rank: usize,
    tokens: Vec<String>,
    score: f64,
    delays: Vec<usize>,
}

fn nbest_lines(list: &NBestList, vocab: &Vocabulary) -> String {
    let mut outp = String::new();
    for (i, entry) in list.entries.iter().enumerate() {
        let line = NBestLine {
            rank: i + 1,
            tokens: entry
                .tokens
                .iter()
                .map(|&id| vocab.token(id).unwrap_or("<?>").to_string())
                .collect(),
            score: entry.combined_logp,
            delays: entry.delays.clone(),
        };
        outp.push_str(&serde_json::to_string(&line).expect("line serializes"));
        outp.push('\n');
    }
    outp
}

fn load_lattice_warned(path: &Path, err: &mut dyn Write) -> Result<PosteriorLattice, CliError> {
    let loaded = load_lattice(path)?;
    for w in &loaded.warnings {
        let _ = writeln!(err, "warning: {}: {w}", path.display());
    }
    Ok(loaded.lattice)
}

fn check_vocab_match(lattice: &PosteriorLattice, scorer_vocab: &Vocabulary) -> Result<(), CliError> {
    if lattice.vocab() != scorer_vocab {
        return Err(CliError::new(
            "VOCAB",
            "lattice and scorer vocabularies differ",
        ));
    }
    Ok(())
}

fn cmd_decode(args: DecodeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = args.beam_flags.to_config();
    config.validate().map_err(CliError::from)?;

    // Load shared inputs once; decode utterances in parallel but emit in
    // input order.
    let lattices: Vec<PosteriorLattice> = args
        .lattice
        .iter()
        .map(|p| load_lattice_warned(p, err))
        .collect::<Result<_, _>>()?;

    let blocks: Vec<String> = match args.mode {
        DecodeMode::JointLabel | DecodeMode::JointTime => {
            let scorer = load_trie_scorer(&args.scorer)?;
            for lat in &lattices {
                check_vocab_match(lat, scorer.vocab())?;
            }
            let mode = args.mode;
            lattices
                .par_iter()
                .map(|lat| {
                    let list = match mode {
                        DecodeMode::JointLabel => label_sync_search(lat, &scorer, &config),
                        DecodeMode::JointTime => time_sync_search(lat, &scorer, &config),
                        _ => unreachable!(),
                    }
                    .map_err(CliError::from)?;
                    Ok(nbest_lines(&list, lat.vocab()))
                })
                .collect::<Result<_, CliError>>()?
        }
        DecodeMode::MultiDecoder => {
            let scorer = load_trie_scorer(&args.scorer)?;
            let stage2_lattice_path = args.stage2_lattice.as_ref().ok_or_else(|| {
                CliError::new("CONFIG", "multi-decoder mode requires --stage2-lattice")
            })?;
            let stage2_scorer_path = args.stage2_scorer.as_ref().ok_or_else(|| {
                CliError::new("CONFIG", "multi-decoder mode requires --stage2-scorer")
            })?;
            let stage2_lattice = load_lattice_warned(stage2_lattice_path, err)?;
            let stage2_scorer = load_trie_scorer(stage2_scorer_path)?;
            for lat in &lattices {
                check_vocab_match(lat, scorer.vocab())?;
            }
            check_vocab_match(&stage2_lattice, stage2_scorer.vocab())?;
            lattices
                .iter()
                .map(|lat| {
                    let (_, final_list) = multi_decoder_search(
                        lat,
                        &scorer,
                        &config,
                        |_tokens| {
                            Ok(StageTwo {
                                lattice: stage2_lattice.clone(),
                                scorer: Box::new(stage2_scorer.clone()),
                            })
                        },
                        &config,
                    )
                    .map_err(CliError::from)?;
                    Ok(nbest_lines(&final_list, stage2_lattice.vocab()))
                })
                .collect::<Result<_, CliError>>()?
        }
        DecodeMode::TransducerGreedy
        | DecodeMode::TransducerGraves
        | DecodeMode::TransducerTsd
        | DecodeMode::TransducerAlsd => {
            let scorer = load_joint_scorer(&args.scorer)?;
            let variant = match args.mode {
                DecodeMode::TransducerGreedy => TransducerVariant::Greedy,
                DecodeMode::TransducerGraves => TransducerVariant::Graves,
                DecodeMode::TransducerTsd => TransducerVariant::Tsd,
                DecodeMode::TransducerAlsd => TransducerVariant::Alsd,
                _ => unreachable!(),
            };
            let tconfig = args
                .transducer_flags
                .to_config(args.beam_flags.beam, variant);
            for lat in &lattices {
                if crate::scorers::JointScorer::vocab_size(&scorer) != lat.vocab_size() {
                    return Err(CliError::new(
                        "VOCAB",
                        format!(
                            "joint table covers {} tokens but lattice vocab has {}",
                            crate::scorers::JointScorer::vocab_size(&scorer),
                            lat.vocab_size()
                        ),
                    ));
                }
            }
            lattices
                .par_iter()
                .map(|lat| {
                    let list = transducer_search(lat.frames(), &scorer, &tconfig)
                        .map_err(CliError::from)?;
                    Ok(nbest_lines(&list, lat.vocab()))
                })
                .collect::<Result<_, CliError>>()?
        }
    };

    let combined = blocks.concat();
    match &args.output {
        Some(path) => write_output(path, &combined)?,
        None => {
            let _ = write!(out, "{combined}");
        }
    }
    Ok(())
}

fn cmd_stream(args: StreamArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let lattice = load_lattice_warned(&args.lattice, err)?;
    let rows: Vec<Vec<f64>> = lattice.rows().map(<[f64]>::to_vec).collect();

    // Block layout: explicit size, else the lattice's own boundaries.
    let block_ranges: Vec<(usize, usize)> = match args.block_size {
        Some(0) => {
            return Err(CliError::new("CONFIG", "--block-size must be at least 1"))
        }
        Some(size) => {
            let mut ranges = Vec::new();
            let mut start = 0;
            while start < rows.len() {
                let end = (start + size).min(rows.len());
                ranges.push((start, end));
                start = end;
            }
            ranges
        }
        None => {
            let bounds = lattice.block_boundaries().ok_or_else(|| {
                CliError::new(
                    "CONFIG",
                    "no --block-size given and the lattice carries no block boundaries",
                )
            })?;
            let mut ranges = Vec::new();
            let mut start = 0;
            for &b in bounds {
                ranges.push((start, b));
                start = b;
            }
            ranges
        }
    };
    let block_size = block_ranges
        .iter()
        .map(|(s, e)| e - s)
        .max()
        .unwrap_or(1)
        .max(1);
    // Only the final block may run short.
    for (i, (start, end)) in block_ranges.iter().enumerate() {
        if end - start < block_size && i + 1 != block_ranges.len() {
            let _ = writeln!(
                err,
                "warning: block {} has {} frames (block size {block_size})",
                i + 1,
                end - start
            );
        }
    }

    let commit_rule = match args.policy {
        PolicyArg::HoldN => CommitRule::HoldN(args.n),
        PolicyArg::LocalAgreement => CommitRule::LocalAgreement(args.agree_k),
    };
    let engine_kind = match args.engine {
        StreamEngineArg::LabelSync => EngineKind::LabelSync,
        StreamEngineArg::TimeSync => EngineKind::TimeSync,
        StreamEngineArg::TransducerTsd => EngineKind::TransducerTsd,
    };
    let mut policy = StreamPolicy::new(engine_kind, commit_rule, block_size);
    policy.carry_top1_only = args.carry_top1;
    if args.no_boundary_detect {
        policy.end_detect = None;
    }

    let setup = match args.engine {
        StreamEngineArg::LabelSync | StreamEngineArg::TimeSync => {
            let scorer = load_trie_scorer(&args.scorer)?;
            check_vocab_match(&lattice, scorer.vocab())?;
            let config = args.beam_flags.to_config();
            let scorer = Arc::new(scorer);
            if args.engine == StreamEngineArg::LabelSync {
                EngineSetup::LabelSync { scorer, config }
            } else {
                EngineSetup::TimeSync { scorer, config }
            }
        }
        StreamEngineArg::TransducerTsd => {
            let scorer = load_joint_scorer(&args.scorer)?;
            if crate::scorers::JointScorer::vocab_size(&scorer) != lattice.vocab_size() {
                return Err(CliError::new(
                    "VOCAB",
                    "joint table width does not match the lattice vocabulary",
                ));
            }
            EngineSetup::TransducerTsd {
                scorer: Arc::new(scorer),
                config: args
                    .transducer_flags
                    .to_config(args.beam_flags.beam, TransducerVariant::Tsd),
            }
        }
    };

    let mut session =
        open_session(lattice.vocab().clone(), policy, setup).map_err(CliError::from)?;
    for &(start, end) in &block_ranges {
        session
            .process_block(&rows[start..end])
            .map_err(CliError::from)?;
        if session.detect_boundary() {
            break;
        }
    }
    let (result, record) = session.finalize().map_err(CliError::from)?;

    let events = session.event_log_jsonl();
    match &args.events_out {
        Some(path) => write_output(path, &events)?,
        None => {
            let _ = write!(out, "{events}");
        }
    }

    #[derive(Serialize)]
    struct FinalSummary {
        tokens: Vec<String>,
        score: f64,
        frames_consumed: usize,
        al_frames: f64,
        al_seconds: f64,
    }
    let al_frames = if record.target_len > 0 && record.source_len > 0 {
        average_lagging(&record).map_err(CliError::from)?
    } else {
        0.0
    };
    let summary = FinalSummary {
        tokens: result
            .tokens
            .iter()
            .map(|&id| lattice.vocab().token(id).unwrap_or("<?>").to_string())
            .collect(),
        score: result.score,
        frames_consumed: record.source_len,
        al_frames,
        al_seconds: al_frames * args.frame_ms / 1000.0,
    };
    let line = serde_json::to_string(&summary).expect("summary serializes");
    match &args.final_out {
        Some(path) => write_output(path, &format!("{line}\n"))?,
        None => {
            let _ = writeln!(err, "{line}");
        }
    }
    Ok(())
}

fn cmd_eval_bleu(args: EvalBleuArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let hyp_text = read_to_string(&args.hyp)?;
    let ref_text = read_to_string(&args.reference)?;
    let hyps: Vec<&str> = hyp_text.lines().collect();
    let refs: Vec<&str> = ref_text.lines().collect();
    let report = corpus_bleu(&hyps, &refs, Tokenizer::Whitespace)?;

    #[derive(Serialize)]
    struct BleuLine {
        bleu: f64,
        precisions: [f64; 4],
        brevity_penalty: f64,
        hyp_len: usize,
        ref_len: usize,
    }
    let line = BleuLine {
        bleu: report.bleu,
        precisions: report.precisions,
        brevity_penalty: report.brevity_penalty,
        hyp_len: report.hyp_len,
        ref_len: report.ref_len,
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("serializes"));
    Ok(())
}

fn cmd_eval_al(args: EvalAlArgs, out: &mut dyn Write) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Utterance {
        file: String,
        al_frames: f64,
        al_seconds: f64,
    }
    #[derive(Serialize)]
    struct AlSummary {
        utterances: Vec<Utterance>,
        corpus_al_frames: f64,
        corpus_al_seconds: f64,
    }
    let mut records = Vec::new();
    let mut utterances = Vec::new();
    for path in &args.events {
        let text = read_to_string(path)?;
        let events = parse_event_log(std::io::Cursor::new(text.as_bytes()))?;
        let record = latency_from_events(&events);
        let al = average_lagging(&record)?;
        utterances.push(Utterance {
            file: path.display().to_string(),
            al_frames: al,
            al_seconds: al * args.frame_ms / 1000.0,
        });
        records.push(record);
    }
    let corpus = corpus_al(&records)?;
    let summary = AlSummary {
        utterances,
        corpus_al_frames: corpus,
        corpus_al_seconds: corpus * args.frame_ms / 1000.0,
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("serializes"));
    Ok(())
}

fn cmd_mbr(args: MbrArgs, out: &mut dyn Write) -> Result<(), CliError> {
    #[derive(serde::Deserialize)]
    struct NBestLineIn {
        tokens: Vec<String>,
        score: f64,
    }
    let mut pool: Vec<(Vec<String>, f64)> = Vec::new();
    for path in &args.nbest {
        let text = read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: NBestLineIn = serde_json::from_str(line).map_err(|e| {
                CliError::new(
                    "PARSE",
                    format!("{} line {}: {e}", path.display(), i + 1),
                )
            })?;
            pool.push((parsed.tokens, parsed.score));
        }
    }
    let config = MbrConfig {
        weighting: match args.weighting {
            WeightingArg::Uniform => MbrWeighting::Uniform,
            WeightingArg::ScoreSoftmax => MbrWeighting::ScoreSoftmax {
                temperature: args.temperature,
            },
        },
        ..MbrConfig::default()
    };
    let ranked = mbr_rank_sentences(pool, &config)?;

    #[derive(Serialize)]
    struct MbrLine {
        rank: usize,
        tokens: Vec<String>,
        utility: f64,
        model_score: f64,
    }
    for (i, c) in ranked.iter().enumerate() {
        let line = MbrLine {
            rank: i + 1,
            tokens: c.tokens.clone(),
            utility: c.utility,
            model_score: c.model_score,
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("serializes"));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let planted: Vec<usize> = if args.planted.trim().is_empty() {
        Vec::new()
    } else {
        args.planted
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::new("CONFIG", format!("--planted: {e}")))
            })
            .collect::<Result<_, _>>()?
    };
    for &idx in &planted {
        if idx >= args.vocab_size as usize {
            return Err(CliError::new(
                "CONFIG",
                format!(
                    "--planted index {idx} out of range for vocab size {}",
                    args.vocab_size
                ),
            ));
        }
    }
    let spec = crate::testkit::SyntheticSpec {
        vocab_size: args.vocab_size as usize,
        planted_sequence: planted,
        frames_per_token: args.frames_per_token as usize,
        noise_logp: args.noise,
        seed: args.seed,
        trailing_blank_frames: args.trailing_blanks as usize,
    };
    let task = crate::testkit::generate_synthetic(&spec);
    save_lattice(&task.lattice, &args.out_lattice)?;
    if let Some(path) = &args.out_scorer {
        save_trie_scorer(&task.scorer, path)?;
    }
    if let Some(path) = &args.out_joint {
        let (joint, _, _) = crate::testkit::generate_synthetic_joint(&spec);
        save_joint_scorer(&joint, path)?;
    }
    if let Some(path) = &args.out_ref {
        write_output(path, &format!("{}\n", task.reference))?;
    }
    let _ = writeln!(
        err,
        "synth: {} frames, vocab {} -> {}",
        task.lattice.frames(),
        task.lattice.vocab_size(),
        args.out_lattice.display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load_lattice(&args.lattice)?;
    let report = validate_lattice(&loaded.lattice);

    #[derive(Serialize)]
    struct ValidateLine {
        ok: bool,
        violations: Vec<String>,
    }
    let line = ValidateLine {
        ok: report.is_ok(),
        violations: report.violations.iter().map(|v| v.to_string()).collect(),
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("serializes"));
    if report.is_ok() {
        Ok(())
    } else {
        let _ = writeln!(err, "validate: {} violation(s)", report.violations.len());
        Err(CliError::new("VALIDATION", "lattice invariants violated"))
    }
}
