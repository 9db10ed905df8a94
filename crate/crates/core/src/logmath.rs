//! Log-domain arithmetic over a finite floor.
//!
//! All scores in this crate are natural-log probabilities. True negative
//! infinity is replaced by the finite sentinel [`LOG_ZERO`] so that score
//! arithmetic and comparisons stay total; anything at or below
//! [`LOG_ZERO_FLOOR`] is treated as zero probability and absorbs through
//! [`log_add`] and [`log_sum`].

/// Finite stand-in for log(0).
pub const LOG_ZERO: f64 = -1e10;

/// Threshold at or below which a value is treated as log(0).
pub const LOG_ZERO_FLOOR: f64 = -5e9;

/// True if `x` represents zero probability.
#[inline]
pub fn is_log_zero(x: f64) -> bool {
    x <= LOG_ZERO_FLOOR
}

/// log(exp(a) + exp(b)), absorbing on [`LOG_ZERO`].
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if is_log_zero(a) {
        return if is_log_zero(b) { LOG_ZERO } else { b };
    }
    if is_log_zero(b) {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log Σ exp(x) over a slice, absorbing on [`LOG_ZERO`].
pub fn log_sum(xs: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        if !is_log_zero(x) && x > hi {
            hi = x;
        }
    }
    if hi == f64::NEG_INFINITY {
        return LOG_ZERO;
    }
    let sum: f64 = xs
        .iter()
        .filter(|x| !is_log_zero(**x))
        .map(|&x| (x - hi).exp())
        .sum();
    hi + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct_sum() {
        let a: f64 = 0.3f64.ln();
        let b: f64 = 0.45f64.ln();
        assert!((log_add(a, b) - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_add_absorbs_zero() {
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        let x = -2.5;
        assert_eq!(log_add(LOG_ZERO, x), x);
        assert_eq!(log_add(x, LOG_ZERO), x);
    }

    #[test]
    fn log_sum_empty_and_all_zero() {
        assert_eq!(log_sum(&[]), LOG_ZERO);
        assert_eq!(log_sum(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
    }

    #[test]
    fn log_sum_matches_pairwise() {
        let xs = [-1.0, -2.0, -3.0, LOG_ZERO];
        let pairwise = xs.iter().fold(LOG_ZERO, |acc, &x| log_add(acc, x));
        assert!((log_sum(&xs) - pairwise).abs() < 1e-12);
    }

    #[test]
    fn values_below_floor_absorb() {
        // Sums that drift below the sentinel must still behave as zero.
        let drifted = LOG_ZERO - 42.0;
        assert!(is_log_zero(drifted));
        assert_eq!(log_add(drifted, -1.0), -1.0);
    }
}
