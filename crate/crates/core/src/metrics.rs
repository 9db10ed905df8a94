//! Quality and latency scoring: corpus BLEU over whitespace tokens (case
//! sensitive, no smoothing) and Average Lagging over latency records.

use thiserror::Error;

use crate::streaming::LatencyRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no sentence pairs to score")]
    EmptyCorpus,
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("invalid latency record: {0}")]
    BadRecord(String),
}

/// Tokenization applied before n-gram counting. Whitespace splitting over
/// already-detokenized text is the only built-in; international tokenizers
/// are a named extension point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Tokenizer {
    #[default]
    Whitespace,
}

impl Tokenizer {
    fn split<'a>(&self, s: &'a str) -> Vec<&'a str> {
        match self {
            Tokenizer::Whitespace => s.split_whitespace().collect(),
        }
    }
}

/// Corpus BLEU decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// 0..=100; exactly 0 when any modified precision is 0.
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Modified n-gram precision up to 4-grams aggregated over the corpus,
/// brevity penalty min(1, exp(1 - r/c)), case-sensitive, no smoothing.
pub fn corpus_bleu(
    hypotheses: &[impl AsRef<str>],
    references: &[impl AsRef<str>],
    tokenizer: Tokenizer,
) -> Result<BleuReport, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }

    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        let h = tokenizer.split(hyp.as_ref());
        let r = tokenizer.split(rf.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 0..4 {
            let order = n + 1;
            if h.len() >= order {
                totals[n] += h.len() - order + 1;
            }
            let mut ref_counts: std::collections::HashMap<&[&str], usize> =
                std::collections::HashMap::new();
            if r.len() >= order {
                for w in r.windows(order) {
                    *ref_counts.entry(w).or_insert(0) += 1;
                }
            }
            let mut hyp_counts: std::collections::HashMap<&[&str], usize> =
                std::collections::HashMap::new();
            if h.len() >= order {
                for w in h.windows(order) {
                    *hyp_counts.entry(w).or_insert(0) += 1;
                }
            }
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n] += count.min(clip);
            }
        }
    }

    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp() * 100.0
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Average Lagging in source-frame units:
/// `AL = (1/τ) Σ_{i=1..τ} (d_i - (i-1)·|X|/|Y|)` where τ is the index of the
/// first token written after the whole source was consumed (|Y| when none
/// is). Unit conversion (frames to seconds) is the caller's concern.
pub fn average_lagging(record: &LatencyRecord) -> Result<f64, MetricsError> {
    let x = record.source_len;
    let y = record.target_len;
    if x == 0 {
        return Err(MetricsError::BadRecord("source length is zero".into()));
    }
    if y == 0 {
        return Err(MetricsError::BadRecord("target length is zero".into()));
    }
    if record.delays.len() > y {
        return Err(MetricsError::BadRecord(format!(
            "{} delays for target length {y}",
            record.delays.len()
        )));
    }
    if record.delays.len() != y {
        return Err(MetricsError::BadRecord(format!(
            "{} delays do not cover target length {y}",
            record.delays.len()
        )));
    }
    if record.delays.windows(2).any(|w| w[0] > w[1]) {
        return Err(MetricsError::BadRecord("delays must be non-decreasing".into()));
    }
    if record.delays.iter().any(|&d| d > x) {
        return Err(MetricsError::BadRecord(format!(
            "delay exceeds source length {x}"
        )));
    }

    let tau = record
        .delays
        .iter()
        .position(|&d| d == x)
        .map(|i| i + 1)
        .unwrap_or(y);
    let ideal_step = x as f64 / y as f64;
    let sum: f64 = record.delays[..tau]
        .iter()
        .enumerate()
        .map(|(i, &d)| d as f64 - i as f64 * ideal_step)
        .sum();
    Ok(sum / tau as f64)
}

/// Unweighted mean of per-utterance Average Lagging.
pub fn corpus_al(records: &[LatencyRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = 0.0;
    for record in records {
        total += average_lagging(record)?;
    }
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(delays: &[usize], x: usize) -> LatencyRecord {
        LatencyRecord {
            delays: delays.to_vec(),
            source_len: x,
            target_len: delays.len(),
        }
    }

    #[test]
    fn identical_corpus_scores_one_hundred() {
        let lines = ["the cat sat on the mat", "a quick brown fox"];
        let report = corpus_bleu(&lines, &lines, Tokenizer::Whitespace).unwrap();
        assert!((report.bleu - 100.0).abs() < 1e-9);
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn short_hypothesis_hand_example() {
        // p1..p4 all 1, BP = exp(1 - 6/4).
        let report = corpus_bleu(
            &["the cat sat on"],
            &["the cat sat on the mat"],
            Tokenizer::Whitespace,
        )
        .unwrap();
        assert_eq!(report.precisions, [1.0, 1.0, 1.0, 1.0]);
        assert!((report.brevity_penalty - (-0.5f64).exp()).abs() < 1e-12);
        assert!((report.bleu - (-0.5f64).exp() * 100.0).abs() < 1e-9);
        assert_eq!((report.hyp_len, report.ref_len), (4, 6));
    }

    #[test]
    fn disjoint_vocab_scores_zero() {
        let report = corpus_bleu(
            &["alpha beta gamma delta"],
            &["one two three four"],
            Tokenizer::Whitespace,
        )
        .unwrap();
        assert_eq!(report.bleu, 0.0);
        assert_eq!(report.precisions[0], 0.0);
    }

    #[test]
    fn case_sensitivity_and_errors() {
        let report = corpus_bleu(&["The Cat"], &["the cat"], Tokenizer::Whitespace).unwrap();
        assert_eq!(report.bleu, 0.0);
        assert!(matches!(
            corpus_bleu(&[] as &[&str], &[] as &[&str], Tokenizer::Whitespace),
            Err(MetricsError::EmptyCorpus)
        ));
        assert!(matches!(
            corpus_bleu(&["a"], &[] as &[&str], Tokenizer::Whitespace),
            Err(MetricsError::LengthMismatch { hyps: 1, refs: 0 })
        ));
    }

    #[test]
    fn offline_reader_lags_by_the_whole_source() {
        let al = average_lagging(&record(&[10, 10, 10, 10, 10], 10)).unwrap();
        assert_eq!(al, 10.0);
    }

    #[test]
    fn wait_one_stepwise_lags_by_one() {
        let al = average_lagging(&record(&[1, 2, 3, 4], 4)).unwrap();
        assert!((al - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_token_after_full_read() {
        let al = average_lagging(&record(&[7], 7)).unwrap();
        assert_eq!(al, 7.0);
    }

    #[test]
    fn constant_full_delays_equal_source_exactly() {
        for y in 1..6usize {
            let delays = vec![9usize; y];
            let al = average_lagging(&record(&delays, 9)).unwrap();
            assert_eq!(al, 9.0, "y={y}");
        }
    }

    #[test]
    fn record_validation_errors() {
        // More delays than tokens.
        let bad = LatencyRecord {
            delays: vec![1, 2, 3],
            source_len: 5,
            target_len: 2,
        };
        assert!(average_lagging(&bad).is_err());
        let decreasing = LatencyRecord {
            delays: vec![3, 2],
            source_len: 5,
            target_len: 2,
        };
        assert!(average_lagging(&decreasing).is_err());
        let zero_source = record(&[], 0);
        assert!(average_lagging(&zero_source).is_err());
    }

    #[test]
    fn corpus_al_is_the_unweighted_mean() {
        let a = record(&[4, 4], 4); // d_1 = |X| so τ=1: AL = 4
        let b = record(&[1, 2], 2); // τ=2: (1 + 2-1)/2 = 1
        let mean = corpus_al(&[a.clone(), b]).unwrap();
        assert!((mean - 2.5).abs() < 1e-12);
        assert_eq!(corpus_al(std::slice::from_ref(&a)).unwrap(), average_lagging(&a).unwrap());
        assert!(matches!(corpus_al(&[]), Err(MetricsError::EmptyCorpus)));
    }
}
