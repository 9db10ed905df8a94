//! Posterior lattices: T × V grids of frame-level log-probabilities with an
//! embedded vocabulary, plus validation and (de)serialization.
//!
//! Two on-disk forms exist. The text form is a single JSON object carrying
//! the vocabulary, the frame grid, and optional block boundaries. The binary
//! form stores the grid as little-endian f32 preceded by a magic tag and
//! followed by the same JSON metadata as a length-prefixed blob; loading a
//! binary file and saving it again reproduces it bit-exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::logmath::log_sum;
use crate::vocab::{TokenId, Vocabulary};

/// Tag at the head of the binary form (versioned).
pub const BINARY_MAGIC: [u8; 8] = *b"BLATT\0\0\x01";

/// Tolerance on per-row log-mass: each frame row must log-sum-exp to
/// 0 ± this value to count as normalized.
pub const ROW_MASS_TOL: f64 = 1e-4;

/// Frame-level log-probability grid. Immutable after construction and safe
/// to share across concurrent decode sessions.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorLattice {
    vocab: Vocabulary,
    data: Vec<f64>, // t_len * vocab_size, row-major
    t_len: usize,
    block_boundaries: Option<Vec<usize>>,
}

impl PosteriorLattice {
    /// Build from per-frame rows. Only row widths are enforced here; mass
    /// and boundary invariants are reported by [`validate_lattice`].
    pub fn new(
        vocab: Vocabulary,
        frames: Vec<Vec<f64>>,
        block_boundaries: Option<Vec<usize>>,
    ) -> Result<Self, CoreError> {
        let v = vocab.size();
        let mut data = Vec::with_capacity(frames.len() * v);
        for (t, row) in frames.iter().enumerate() {
            if row.len() != v {
                return Err(CoreError::Dimension(format!(
                    "frame {t} has {} values, expected vocab size {v}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(PosteriorLattice {
            vocab,
            t_len: frames.len(),
            data,
            block_boundaries,
        })
    }

    pub fn from_flat(
        vocab: Vocabulary,
        data: Vec<f64>,
        t_len: usize,
        block_boundaries: Option<Vec<usize>>,
    ) -> Result<Self, CoreError> {
        if data.len() != t_len * vocab.size() {
            return Err(CoreError::Dimension(format!(
                "flat data has {} values, expected {} x {}",
                data.len(),
                t_len,
                vocab.size()
            )));
        }
        Ok(PosteriorLattice {
            vocab,
            data,
            t_len,
            block_boundaries,
        })
    }

    pub fn frames(&self) -> usize {
        self.t_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.data[t * v..(t + 1) * v]
    }

    pub fn logp(&self, t: usize, id: TokenId) -> f64 {
        self.data[t * self.vocab.size() + id]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.vocab.size().max(1)).take(self.t_len)
    }

    pub fn block_boundaries(&self) -> Option<&[usize]> {
        self.block_boundaries.as_deref()
    }
}

/// One violated lattice invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Row log-mass outside ±[`ROW_MASS_TOL`].
    RowMass { frame: usize, log_mass: f64 },
    /// NaN or +inf cell (the negative floor is legal).
    NonFinite { frame: usize, col: usize, value: f64 },
    /// Boundaries not strictly ascending at this index.
    BoundaryOrder { index: usize },
    /// Last boundary does not equal the frame count.
    BoundaryEnd { last: usize, frames: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowMass { frame, log_mass } => write!(
                f,
                "frame {frame}: row log-mass {log_mass:.3e} outside ±{ROW_MASS_TOL:.0e}"
            ),
            Violation::NonFinite { frame, col, value } => {
                write!(f, "frame {frame}, column {col}: non-finite value {value}")
            }
            Violation::BoundaryOrder { index } => {
                write!(f, "block_boundaries not strictly ascending at index {index}")
            }
            Violation::BoundaryEnd { last, frames } => write!(
                f,
                "last block boundary {last} does not equal frame count {frames}"
            ),
        }
    }
}

/// Outcome of [`validate_lattice`]; empty means every invariant holds.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

/// Check row normalization, boundary monotonicity, and scan for NaN/inf.
/// Returns a report; callers decide whether violations are fatal.
pub fn validate_lattice(lattice: &PosteriorLattice) -> ValidationReport {
    let mut violations = Vec::new();
    for t in 0..lattice.frames() {
        let row = lattice.row(t);
        for (c, &x) in row.iter().enumerate() {
            if x.is_nan() || x == f64::INFINITY {
                violations.push(Violation::NonFinite {
                    frame: t,
                    col: c,
                    value: x,
                });
            }
        }
        let mass = log_sum(row);
        if mass.abs() > ROW_MASS_TOL {
            violations.push(Violation::RowMass {
                frame: t,
                log_mass: mass,
            });
        }
    }
    if let Some(bounds) = lattice.block_boundaries() {
        for i in 1..bounds.len() {
            if bounds[i] <= bounds[i - 1] {
                violations.push(Violation::BoundaryOrder { index: i });
            }
        }
        match bounds.last() {
            Some(&last) if last != lattice.frames() => violations.push(Violation::BoundaryEnd {
                last,
                frames: lattice.frames(),
            }),
            None => violations.push(Violation::BoundaryEnd {
                last: 0,
                frames: lattice.frames(),
            }),
            _ => {}
        }
    }
    ValidationReport { violations }
}

#[derive(Serialize, Deserialize)]
struct LatticeFile {
    #[serde(flatten)]
    vocab: Vocabulary,
    frames: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_boundaries: Option<Vec<usize>>,
}

/// Metadata blob appended to the binary form: the text format minus `frames`.
#[derive(Serialize, Deserialize)]
struct LatticeHeader {
    #[serde(flatten)]
    vocab: Vocabulary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_boundaries: Option<Vec<usize>>,
}

/// A loaded lattice plus non-fatal findings. Rows outside the mass tolerance
/// load with a warning instead of an error: quantized exports drift.
pub struct LatticeLoad {
    pub lattice: PosteriorLattice,
    pub warnings: Vec<String>,
}

/// Load either on-disk form, detected by the binary magic.
pub fn load_lattice(path: impl AsRef<Path>) -> Result<LatticeLoad, CoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let lattice = if bytes.starts_with(&BINARY_MAGIC) {
        read_lattice_binary(&bytes)?
    } else {
        read_lattice_text(&bytes)?
    };
    let warnings = validate_lattice(&lattice)
        .violations
        .into_iter()
        .map(|v| v.to_string())
        .collect();
    Ok(LatticeLoad { lattice, warnings })
}

/// Save to the text form when the path ends in `.json`, else binary.
pub fn save_lattice(lattice: &PosteriorLattice, path: impl AsRef<Path>) -> Result<(), CoreError> {
    let path = path.as_ref();
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        write_lattice_text(lattice)?
    } else {
        write_lattice_binary(lattice)
    };
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

pub fn read_lattice_text(bytes: &[u8]) -> Result<PosteriorLattice, CoreError> {
    let file: LatticeFile = serde_json::from_slice(bytes)
        .map_err(|e| CoreError::Parse(format!("lattice json: {e}")))?;
    PosteriorLattice::new(file.vocab, file.frames, file.block_boundaries)
}

pub fn write_lattice_text(lattice: &PosteriorLattice) -> Result<Vec<u8>, CoreError> {
    let file = LatticeFile {
        vocab: lattice.vocab.clone(),
        frames: lattice.rows().map(<[f64]>::to_vec).collect(),
        block_boundaries: lattice.block_boundaries.clone(),
    };
    serde_json::to_vec(&file).map_err(|e| CoreError::Parse(format!("lattice json: {e}")))
}

pub fn read_lattice_binary(bytes: &[u8]) -> Result<PosteriorLattice, CoreError> {
    let need = |n: usize, what: &str, at: usize| {
        if bytes.len() < at + n {
            Err(CoreError::Parse(format!(
                "binary lattice truncated in {what} (need {n} bytes at offset {at})"
            )))
        } else {
            Ok(())
        }
    };
    need(8, "magic", 0)?;
    if bytes[..8] != BINARY_MAGIC {
        return Err(CoreError::Parse("binary lattice: bad magic".into()));
    }
    need(8, "dimensions", 8)?;
    let t_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let v_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let grid_bytes = t_len
        .checked_mul(v_len)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CoreError::Parse("binary lattice: dimensions overflow".into()))?;
    need(grid_bytes, "frames", 16)?;
    let mut data = Vec::with_capacity(t_len * v_len);
    for i in 0..t_len * v_len {
        let at = 16 + i * 4;
        let x = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        data.push(f64::from(x));
    }
    let hdr_at = 16 + grid_bytes;
    need(4, "header length", hdr_at)?;
    let hdr_len = u32::from_le_bytes(bytes[hdr_at..hdr_at + 4].try_into().unwrap()) as usize;
    need(hdr_len, "header", hdr_at + 4)?;
    let header: LatticeHeader = serde_json::from_slice(&bytes[hdr_at + 4..hdr_at + 4 + hdr_len])
        .map_err(|e| CoreError::Parse(format!("binary lattice header: {e}")))?;
    if header.vocab.size() != v_len {
        return Err(CoreError::Dimension(format!(
            "header vocab has {} tokens but grid column count is {v_len}",
            header.vocab.size()
        )));
    }
    PosteriorLattice::from_flat(header.vocab, data, t_len, header.block_boundaries)
}

pub fn write_lattice_binary(lattice: &PosteriorLattice) -> Vec<u8> {
    let header = LatticeHeader {
        vocab: lattice.vocab.clone(),
        block_boundaries: lattice.block_boundaries.clone(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + lattice.data.len() * 4 + 4 + header_bytes.len());
    out.extend_from_slice(&BINARY_MAGIC);
    out.extend_from_slice(&(lattice.t_len as u32).to_le_bytes());
    out.extend_from_slice(&(lattice.vocab.size() as u32).to_le_bytes());
    for &x in &lattice.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_token_vocab() -> Vocabulary {
        // blank sos eos unk a
        Vocabulary::standard(1)
    }

    fn uniform_row(v: usize) -> Vec<f64> {
        vec![-(v as f64).ln(); v]
    }

    #[test]
    fn validate_accepts_normalized_rows() {
        let v = two_token_vocab();
        let rows = vec![uniform_row(5), uniform_row(5)];
        let lat = PosteriorLattice::new(v, rows, None).unwrap();
        assert!(validate_lattice(&lat).is_ok());
    }

    #[test]
    fn validate_reports_row_mass_violation() {
        let v = two_token_vocab();
        // Two cells at 0.6 each: mass 1.2.
        let mut row = vec![crate::logmath::LOG_ZERO; 5];
        row[0] = 0.6f64.ln();
        row[4] = 0.6f64.ln();
        let lat = PosteriorLattice::new(v, vec![row], None).unwrap();
        let report = validate_lattice(&lat);
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::RowMass { frame: 0, .. }]
        ));
    }

    #[test]
    fn validate_reports_descending_boundaries() {
        let v = two_token_vocab();
        let rows = vec![uniform_row(5), uniform_row(5), uniform_row(5)];
        let lat = PosteriorLattice::new(v, rows, Some(vec![3, 2])).unwrap();
        let report = validate_lattice(&lat);
        assert!(report
            .violations
            .iter()
            .any(|x| matches!(x, Violation::BoundaryOrder { index: 1 })));
        assert!(report
            .violations
            .iter()
            .any(|x| matches!(x, Violation::BoundaryEnd { last: 2, frames: 3 })));
    }

    #[test]
    fn validate_scans_non_finite() {
        let v = two_token_vocab();
        let mut row = uniform_row(5);
        row[2] = f64::NAN;
        let lat = PosteriorLattice::new(v, vec![row], None).unwrap();
        let report = validate_lattice(&lat);
        assert!(report
            .violations
            .iter()
            .any(|x| matches!(x, Violation::NonFinite { frame: 0, col: 2, .. })));
    }

    #[test]
    fn new_rejects_short_row() {
        let v = two_token_vocab();
        let err = PosteriorLattice::new(v, vec![vec![0.0; 4]], None).unwrap_err();
        assert!(matches!(err, CoreError::Dimension(_)));
    }

    #[test]
    fn text_round_trip_minimal() {
        let v = two_token_vocab();
        let lat = PosteriorLattice::new(v, vec![uniform_row(5)], None).unwrap();
        let bytes = write_lattice_text(&lat).unwrap();
        let back = read_lattice_text(&bytes).unwrap();
        assert_eq!(lat, back);
    }

    #[test]
    fn binary_truncation_names_section() {
        let v = two_token_vocab();
        let lat = PosteriorLattice::new(v, vec![uniform_row(5)], None).unwrap();
        let bytes = write_lattice_binary(&lat);
        let err = read_lattice_binary(&bytes[..20]).unwrap_err();
        assert!(err.to_string().contains("frames"), "{err}");
    }

    #[test]
    fn binary_header_vocab_mismatch_is_a_dimension_error() {
        // Hand-build a file whose grid claims five columns while the header
        // vocabulary carries only four tokens.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&BINARY_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&5u32.to_le_bytes());
        for x in uniform_row(5) {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let header = serde_json::to_vec(&Vocabulary::standard(0)).unwrap();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header);
        let err = read_lattice_binary(&bytes).unwrap_err();
        assert!(matches!(err, CoreError::Dimension(_)), "{err}");
    }

    #[test]
    fn text_row_width_mismatch_is_a_dimension_error() {
        let v = two_token_vocab();
        let mut value: serde_json::Value =
            serde_json::from_slice(&write_lattice_text(
                &PosteriorLattice::new(v, vec![uniform_row(5)], None).unwrap(),
            ).unwrap())
            .unwrap();
        value["frames"][0].as_array_mut().unwrap().pop();
        let err = read_lattice_text(value.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Dimension(_)), "{err}");
        assert!(err.to_string().contains("frame 0"), "{err}");
    }

    #[test]
    fn load_warns_but_succeeds_on_drifted_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drifted.json");
        let v = two_token_vocab();
        let mut row = vec![crate::logmath::LOG_ZERO; 5];
        row[0] = 0.6f64.ln();
        row[4] = 0.6f64.ln();
        let lat = PosteriorLattice::new(v, vec![row], None).unwrap();
        save_lattice(&lat, &path).unwrap();
        let loaded = load_lattice(&path).unwrap();
        assert_eq!(loaded.lattice, lat);
        assert_eq!(loaded.warnings.len(), 1);
    }

    /// Random valid lattice over f32-representable values so both forms
    /// round-trip exactly.
    fn arb_lattice() -> impl Strategy<Value = PosteriorLattice> {
        (1usize..6, 0usize..4, any::<u64>(), proptest::bool::ANY).prop_map(
            |(t_len, extra, seed, with_bounds)| {
                use rand::{Rng, SeedableRng};
                let vocab = Vocabulary::standard(1 + extra);
                let v = vocab.size();
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
                let mut rows = Vec::with_capacity(t_len);
                for _ in 0..t_len {
                    let raw: Vec<f64> = (0..v).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let total: f64 = raw.iter().sum();
                    // Store as f32 so the binary form is lossless.
                    let row: Vec<f64> =
                        raw.iter().map(|x| f64::from(((x / total).ln()) as f32)).collect();
                    rows.push(row);
                }
                let bounds = with_bounds.then(|| vec![t_len]);
                PosteriorLattice::new(vocab, rows, bounds).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(lat in arb_lattice()) {
            let text = write_lattice_text(&lat).unwrap();
            prop_assert_eq!(&read_lattice_text(&text).unwrap(), &lat);
            let bin = write_lattice_binary(&lat);
            prop_assert_eq!(&read_lattice_binary(&bin).unwrap(), &lat);
            // save(load(f)) == load(f), byte level, for the binary form.
            let again = write_lattice_binary(&read_lattice_binary(&bin).unwrap());
            prop_assert_eq!(bin, again);
        }

        #[test]
        fn generated_lattices_validate(lat in arb_lattice()) {
            prop_assert!(validate_lattice(&lat).is_ok());
        }
    }
}
