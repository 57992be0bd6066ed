//! Deterministic statistical primitives.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking a logit.
pub const LOGIT_EPS: f64 = 1e-12;

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("quantile level {q} outside [0, 1]")));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input contains {v}")));
    }
    Ok(())
}

/// Linear-interpolation quantile (Hyndman & Fan type 7).
///
/// With `h = q·(n−1)` on the sorted values the result is
/// `v[⌊h⌋] + (h − ⌊h⌋)·(v[⌊h⌋+1] − v[⌊h⌋])`, so `q = 0` yields the minimum
/// and `q = 1` the maximum.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    check_q(q)?;
    check_finite(values)?;
    let n = values.len();
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;

    let mut buf = values.to_vec();
    let (_, &mut lower, upper_part) = buf.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || lo + 1 >= n {
        return Ok(lower);
    }
    // The next order statistic is the minimum of the partition above `lo`.
    let upper = upper_part.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(lower + frac * (upper - lower))
}

/// Type-7 quantile of a slice already sorted ascending.
///
/// Callers that need many quantiles of the same data sort once and use this.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    check_q(q)?;
    let n = sorted.len();
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= n {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// 1-based ranks; ties share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Result<Vec<f64>> {
    check_finite(values)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    Ok(ranks)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

/// Maps a cross-entropy loss to the logit of the true-class probability.
///
/// `p = exp(−loss)` is clamped to `[ε, 1−ε]` before `log(p / (1−p))`.
pub fn loss_to_logit_confidence(loss: f64) -> Result<f64> {
    if loss.is_nan() || loss < 0.0 {
        return Err(Error::domain(format!("loss must be non-negative, got {loss}")));
    }
    // ln p = -loss and ln(1 - p) via expm1, so neither end loses precision.
    let q = -(-loss).exp_m1();
    let (ln_p, ln_q) = if q < LOGIT_EPS {
        ((-LOGIT_EPS).ln_1p(), LOGIT_EPS.ln())
    } else if -loss < LOGIT_EPS.ln() {
        (LOGIT_EPS.ln(), (-LOGIT_EPS).ln_1p())
    } else {
        (-loss, q.ln())
    };
    Ok(ln_p - ln_q)
}

/// Total order on floats for sorting scores; NaN is rejected upstream.
pub(crate) fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}
