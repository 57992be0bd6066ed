//! Vulnerability scores computed from per-sample loss traces.
//!
//! Every aggregator works on the trained part of a trace, `ℓ_1..ℓ_S`; the
//! pre-training loss `ℓ_0` stays in the [`TraceSet`] but never enters a score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{cmp_f64, quantile_sorted};
use crate::types::{ScoreVector, TraceSet};

fn nonempty(trace: &[f64]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(v) = trace.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("trace contains {v}")));
    }
    Ok(())
}

/// LT-Mean: average trained loss.
pub fn lt_mean(trace: &[f64]) -> Result<f64> {
    nonempty(trace)?;
    Ok(trace.iter().sum::<f64>() / trace.len() as f64)
}

/// LT-LP-Norm: `(Σ|ℓ_s|^p)^(1/p)`, or the maximum when `p` is infinite.
pub fn lt_lp_norm(trace: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::domain(format!("norm order must be >= 1, got {p}")));
    }
    nonempty(trace)?;
    if p.is_infinite() {
        return Ok(trace.iter().map(|l| l.abs()).fold(0.0, f64::max));
    }
    if p == 1.0 {
        return Ok(trace.iter().map(|l| l.abs()).sum());
    }
    if p == 2.0 {
        return Ok(trace.iter().map(|l| l * l).sum::<f64>().sqrt());
    }
    Ok(trace.iter().map(|l| l.abs().powf(p)).sum::<f64>().powf(1.0 / p))
}

/// LT-Slope: least-squares slope of the loss against the epoch index.
///
/// The raw slope is negative for a sample that is being learned; callers
/// that rank by risk usually negate it (see [`AggregatorSpec::Slope`]).
pub fn lt_slope(trace: &[f64]) -> Result<f64> {
    nonempty(trace)?;
    let n = trace.len();
    if n < 2 {
        return Err(Error::DegenerateRegression(n));
    }
    // Epochs are symmetric about their mean, so Σ(ℓ_s − ℓ̄)(s − s̄) pairs up
    // as Σ (ℓ_{S+1-s} − ℓ_s)(S+1-s − s̄); a flat trace gives exactly 0.
    let half = (n as f64 - 1.0) / 2.0;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n / 2 {
        let ds = half - i as f64;
        num += (trace[n - 1 - i] - trace[i]) * ds;
        den += 2.0 * ds * ds;
    }
    Ok(num / den)
}

/// LT-Delta: `ℓ_{s*} − ℓ_S` with `s*` counted from 1.
pub fn lt_delta(trace: &[f64], s_star: usize) -> Result<f64> {
    nonempty(trace)?;
    let s = trace.len();
    if s_star == 0 || s_star > s {
        return Err(Error::domain(format!("early epoch {s_star} outside [1, {s}]")));
    }
    Ok(trace[s_star - 1] - trace[s - 1])
}

/// LT-IQR: spread between the `q2` and `q1` quantiles of the trace.
pub fn lt_iqr(trace: &[f64], q1: f64, q2: f64) -> Result<f64> {
    check_quantile_pair(q1, q2)?;
    nonempty(trace)?;
    let mut sorted = trace.to_vec();
    sorted.sort_by(cmp_f64);
    Ok(quantile_sorted(&sorted, q2)? - quantile_sorted(&sorted, q1)?)
}

fn check_quantile_pair(q1: f64, q2: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q1) || !(0.0..=1.0).contains(&q2) || q1 >= q2 {
        return Err(Error::domain(format!("need 0 <= q1 < q2 <= 1, got q1 = {q1}, q2 = {q2}")));
    }
    Ok(())
}

/// Constants of the early-epoch rule.
///
/// An epoch qualifies once the mean test loss has covered `drop_fraction` of
/// its total decrease while the train/test gap is at most `gap_fraction` of
/// the test loss. Without a qualifying epoch, `⌈fallback_fraction·S⌉` is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyEpochRule {
    pub drop_fraction: f64,
    pub gap_fraction: f64,
    pub fallback_fraction: f64,
}

impl Default for EarlyEpochRule {
    fn default() -> Self {
        Self { drop_fraction: 0.5, gap_fraction: 0.1, fallback_fraction: 0.1 }
    }
}

/// Picks `s*` from per-epoch mean train and test losses (both of length `S+1`).
pub fn select_early_epoch(train_avg: &[f64], test_avg: &[f64]) -> Result<usize> {
    select_early_epoch_with(train_avg, test_avg, EarlyEpochRule::default())
}

pub fn select_early_epoch_with(train_avg: &[f64], test_avg: &[f64], rule: EarlyEpochRule) -> Result<usize> {
    if train_avg.len() != test_avg.len() {
        return Err(Error::Shape(format!(
            "train curve has {} epochs, test curve {}",
            train_avg.len(),
            test_avg.len()
        )));
    }
    if test_avg.len() < 2 {
        return Err(Error::domain("early-epoch selection needs at least one trained epoch"));
    }
    let epochs = test_avg.len() - 1;
    let initial = test_avg[0];
    let lowest = test_avg.iter().copied().fold(f64::INFINITY, f64::min);
    let target = initial - rule.drop_fraction * (initial - lowest);
    let found = (1..=epochs).find(|&s| {
        let gap = test_avg[s] - train_avg[s];
        test_avg[s] <= target && gap <= rule.gap_fraction * test_avg[s]
    });
    Ok(found.unwrap_or_else(|| ((rule.fallback_fraction * epochs as f64).ceil() as usize).clamp(1, epochs)))
}

/// Which aggregator to apply and with which parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorSpec {
    Mean,
    LpNorm {
        #[serde(with = "norm_order")]
        p: f64,
    },
    /// With `negate` the steepest descent scores highest.
    Slope {
        #[serde(default = "default_true")]
        negate: bool,
    },
    /// `early_epoch = None` derives `s*` from the run's own member and
    /// non-member mean losses.
    Delta {
        #[serde(default)]
        early_epoch: Option<usize>,
    },
    Iqr {
        #[serde(default = "default_q1")]
        q1: f64,
        #[serde(default = "default_q2")]
        q2: f64,
    },
}

fn default_true() -> bool {
    true
}
fn default_q1() -> f64 {
    0.25
}
fn default_q2() -> f64 {
    0.75
}

impl AggregatorSpec {
    pub const IQR: AggregatorSpec = AggregatorSpec::Iqr { q1: 0.25, q2: 0.75 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorSpec::LpNorm { p } if p.is_nan() || p < 1.0 => {
                Err(Error::domain(format!("norm order must be >= 1, got {p}")))
            }
            AggregatorSpec::Iqr { q1, q2 } => check_quantile_pair(q1, q2),
            AggregatorSpec::Delta { early_epoch: Some(0) } => Err(Error::domain("early epoch must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Stable identifier used for file names and report rows.
    pub fn name(&self) -> String {
        match *self {
            AggregatorSpec::Mean => "lt_mean".into(),
            AggregatorSpec::LpNorm { p } if p.is_infinite() => "lt_linf_norm".into(),
            AggregatorSpec::LpNorm { p } => format!("lt_l{}_norm", fmt_num(p)),
            AggregatorSpec::Slope { negate: true } => "lt_slope".into(),
            AggregatorSpec::Slope { negate: false } => "lt_slope_raw".into(),
            AggregatorSpec::Delta { .. } => "lt_delta".into(),
            AggregatorSpec::Iqr { q1, q2 } if q1 == 0.25 && q2 == 0.75 => "lt_iqr".into(),
            AggregatorSpec::Iqr { q1, q2 } => format!("lt_iqr_{}_{}", fmt_num(q1), fmt_num(q2)),
        }
    }

    fn early_epoch(&self, traces: &TraceSet) -> Result<Option<usize>> {
        match *self {
            AggregatorSpec::Delta { early_epoch: Some(s) } => Ok(Some(s)),
            AggregatorSpec::Delta { early_epoch: None } => {
                let (train, test) = traces.split_averages();
                if train.is_empty() || test.is_empty() {
                    return Err(Error::Config(
                        "lt_delta without an explicit early epoch needs member and non-member traces".into(),
                    ));
                }
                select_early_epoch(&train, &test).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn apply(&self, trace: &[f64], s_star: Option<usize>) -> Result<f64> {
        match *self {
            AggregatorSpec::Mean => lt_mean(trace),
            AggregatorSpec::LpNorm { p } => lt_lp_norm(trace, p),
            AggregatorSpec::Slope { negate } => lt_slope(trace).map(|s| if negate { -s } else { s }),
            AggregatorSpec::Delta { .. } => lt_delta(trace, s_star.expect("resolved before use")),
            AggregatorSpec::Iqr { q1, q2 } => lt_iqr(trace, q1, q2),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x}");
    s.replace('.', "p")
}

impl fmt::Display for AggregatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AggregatorSpec::Mean => write!(f, "mean"),
            AggregatorSpec::LpNorm { p } if p.is_infinite() => write!(f, "lp:inf"),
            AggregatorSpec::LpNorm { p } => write!(f, "lp:{p}"),
            AggregatorSpec::Slope { negate: true } => write!(f, "slope"),
            AggregatorSpec::Slope { negate: false } => write!(f, "slope:raw"),
            AggregatorSpec::Delta { early_epoch: None } => write!(f, "delta"),
            AggregatorSpec::Delta { early_epoch: Some(s) } => write!(f, "delta:{s}"),
            AggregatorSpec::Iqr { q1, q2 } => write!(f, "iqr:{q1}:{q2}"),
        }
    }
}

/// Parses `mean`, `lp:<p|inf>`, `slope`, `slope:raw`, `delta`, `delta:<s>`,
/// `iqr` and `iqr:<q1>:<q2>`.
impl FromStr for AggregatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| -> Result<f64> {
            if t.eq_ignore_ascii_case("inf") {
                return Ok(f64::INFINITY);
            }
            t.parse::<f64>().map_err(|_| Error::Config(format!("bad number {t:?} in aggregator {s:?}")))
        };
        let spec = match parts.as_slice() {
            ["mean"] => AggregatorSpec::Mean,
            ["lp", p] => AggregatorSpec::LpNorm { p: num(p)? },
            ["l2"] => AggregatorSpec::LpNorm { p: 2.0 },
            ["slope"] => AggregatorSpec::Slope { negate: true },
            ["slope", "raw"] => AggregatorSpec::Slope { negate: false },
            ["delta"] => AggregatorSpec::Delta { early_epoch: None },
            ["delta", e] => AggregatorSpec::Delta {
                early_epoch: Some(e.parse().map_err(|_| Error::Config(format!("bad epoch in {s:?}")))?),
            },
            ["iqr"] => AggregatorSpec::IQR,
            ["iqr", a, b] => AggregatorSpec::Iqr { q1: num(a)?, q2: num(b)? },
            _ => return Err(Error::Config(format!("unknown aggregator {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

mod norm_order {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(p) => Ok(p),
            Repr::Text(t) if t.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("invalid norm order {t:?}"))),
        }
    }
}

fn score_prefix(traces: &TraceSet, spec: &AggregatorSpec, epochs: usize, s_star: Option<usize>) -> Result<ScoreVector> {
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for (i, id) in traces.sample_ids().iter().enumerate() {
        if !traces.membership()[i] {
            continue;
        }
        let trace = &traces.trained_row(i)[..epochs];
        ids.push(id.clone());
        scores.push(spec.apply(trace, s_star)?);
    }
    ScoreVector::new(spec.name(), ids, scores, true)
}

/// Scores every member of the run; larger scores mean riskier.
pub fn score_all(traces: &TraceSet, spec: &AggregatorSpec) -> Result<ScoreVector> {
    spec.validate()?;
    let s_star = spec.early_epoch(traces)?;
    score_prefix(traces, spec, traces.epoch_count(), s_star)
}

/// Scores computed on the traces truncated at each checkpoint epoch.
///
/// `s*` for LT-Delta is resolved once from the complete run.
pub fn score_evolution(
    traces: &TraceSet,
    spec: &AggregatorSpec,
    checkpoints: &[usize],
) -> Result<Vec<(usize, ScoreVector)>> {
    spec.validate()?;
    let epochs = traces.epoch_count();
    for pair in checkpoints.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::domain("checkpoints must be strictly ascending"));
        }
    }
    if let Some(&e) = checkpoints.iter().find(|&&e| e == 0 || e > epochs) {
        return Err(Error::domain(format!("checkpoint {e} outside [1, {epochs}]")));
    }
    let s_star = spec.early_epoch(traces)?;
    checkpoints
        .iter()
        .map(|&e| score_prefix(traces, spec, e, s_star).map(|s| (e, s)))
        .collect()
}

/// Arithmetic mean of a score vector; a model-level summary.
pub fn mean_score(scores: &ScoreVector) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(scores.scores.iter().sum::<f64>() / scores.len() as f64)
}

/// LT-IQR member scores for every `(q1, q2)` pair with `q1 < q2`.
///
/// Each trace is sorted once. Entry `[i][j]` is `None` when
/// `q1s[i] >= q2s[j]`.
pub fn lt_iqr_grid(traces: &TraceSet, q1s: &[f64], q2s: &[f64]) -> Result<Vec<Vec<Option<ScoreVector>>>> {
    let members: Vec<usize> = (0..traces.len()).filter(|&i| traces.membership()[i]).collect();
    let ids: Vec<String> = members.iter().map(|&i| traces.sample_ids()[i].clone()).collect();
    let sorted: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| {
            let mut row = traces.trained_row(i).to_vec();
            row.sort_by(cmp_f64);
            row
        })
        .collect();
    let mut grid = Vec::with_capacity(q1s.len());
    for &q1 in q1s {
        let mut row = Vec::with_capacity(q2s.len());
        for &q2 in q2s {
            if q1 >= q2 {
                row.push(None);
                continue;
            }
            check_quantile_pair(q1, q2)?;
            let scores = sorted
                .iter()
                .map(|t| Ok(quantile_sorted(t, q2)? - quantile_sorted(t, q1)?))
                .collect::<Result<Vec<_>>>()?;
            let spec = AggregatorSpec::Iqr { q1, q2 };
            row.push(Some(ScoreVector::new(spec.name(), ids.clone(), scores, true)?));
        }
        grid.push(row);
    }
    Ok(grid)
}
