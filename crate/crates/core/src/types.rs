//! Domain types shared across the crate.
//!
//! All of them are validated on construction and immutable afterwards.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample, per-epoch losses of one training run.
///
/// Row `i`, column `s` holds the loss of sample `i` after `s` epochs; column 0
/// is the loss of the initialised model before any update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    sample_ids: Vec<String>,
    losses: Vec<f64>,
    membership: Vec<bool>,
    epoch_count: usize,
}

impl TraceSet {
    /// Builds a trace set from rows of `epoch_count + 1` losses each.
    pub fn new(
        sample_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        membership: Vec<bool>,
        epoch_count: usize,
    ) -> Result<Self> {
        if sample_ids.len() != rows.len() || sample_ids.len() != membership.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} loss rows, {} membership flags",
                sample_ids.len(),
                rows.len(),
                membership.len()
            )));
        }
        let width = epoch_count + 1;
        let mut losses = Vec::with_capacity(rows.len() * width);
        for (id, row) in sample_ids.iter().zip(&rows) {
            if row.len() != width {
                return Err(Error::InvalidTraces(format!(
                    "sample {id:?} has {} losses, expected {width}",
                    row.len()
                )));
            }
            losses.extend_from_slice(row);
        }
        Self::from_flat(sample_ids, losses, membership, epoch_count)
    }

    /// Builds a trace set from a row-major `n × (epoch_count + 1)` buffer.
    pub fn from_flat(
        sample_ids: Vec<String>,
        losses: Vec<f64>,
        membership: Vec<bool>,
        epoch_count: usize,
    ) -> Result<Self> {
        let width = epoch_count + 1;
        if sample_ids.len() != membership.len() || losses.len() != sample_ids.len() * width {
            return Err(Error::Shape(format!(
                "{} ids, {} membership flags, {} losses for width {width}",
                sample_ids.len(),
                membership.len(),
                losses.len()
            )));
        }
        check_unique(&sample_ids)?;
        for (i, &l) in losses.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidTraces(format!(
                    "sample {:?} epoch {}: loss {l} is not a finite non-negative value",
                    sample_ids[i / width],
                    i % width
                )));
            }
        }
        Ok(Self { sample_ids, losses, membership, epoch_count })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Number of training epochs `S`; each row has `S + 1` entries.
    pub fn epoch_count(&self) -> usize {
        self.epoch_count
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    /// Full row `ℓ_0..ℓ_S` of sample `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.epoch_count + 1;
        &self.losses[i * width..(i + 1) * width]
    }

    /// Trained part of the row, `ℓ_1..ℓ_S`.
    pub fn trained_row(&self, i: usize) -> &[f64] {
        &self.row(i)[1..]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.losses.chunks_exact(self.epoch_count + 1)
    }

    /// Losses of every sample after `epoch` epochs.
    pub fn column(&self, epoch: usize) -> Vec<f64> {
        self.rows().map(|r| r[epoch]).collect()
    }

    pub fn final_losses(&self) -> Vec<f64> {
        self.column(self.epoch_count)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn member_ids(&self) -> Vec<String> {
        self.sample_ids
            .iter()
            .zip(&self.membership)
            .filter(|(_, &m)| m)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Mean loss over members and over non-members for each column.
    ///
    /// Returns `(train_avg, test_avg)`; a side with no samples yields an empty vector.
    pub fn split_averages(&self) -> (Vec<f64>, Vec<f64>) {
        let width = self.epoch_count + 1;
        let mut train = vec![0.0; width];
        let mut test = vec![0.0; width];
        let (mut n_train, mut n_test) = (0usize, 0usize);
        for (row, &member) in self.rows().zip(&self.membership) {
            let acc = if member {
                n_train += 1;
                &mut train
            } else {
                n_test += 1;
                &mut test
            };
            for (a, &l) in acc.iter_mut().zip(row) {
                *a += l;
            }
        }
        let finish = |v: Vec<f64>, n: usize| {
            if n == 0 {
                Vec::new()
            } else {
                v.into_iter().map(|s| s / n as f64).collect()
            }
        };
        (finish(train, n_train), finish(test, n_test))
    }

    /// Copy with every loss rounded through `f32`, the on-disk precision.
    pub fn quantized(&self) -> Self {
        Self {
            losses: self.losses.iter().map(|&l| l as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

/// Final-epoch losses of every target sample across shadow runs, split by
/// whether the run trained on the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPanel {
    pub sample_ids: Vec<String>,
    pub in_losses: Vec<Vec<f64>>,
    pub out_losses: Vec<Vec<f64>>,
    pub run_count: usize,
}

impl ShadowPanel {
    pub fn empty(sample_ids: Vec<String>) -> Result<Self> {
        check_unique(&sample_ids)?;
        let n = sample_ids.len();
        Ok(Self { sample_ids, in_losses: vec![Vec::new(); n], out_losses: vec![Vec::new(); n], run_count: 0 })
    }

    /// Folds one shadow run's final-epoch losses into the panel. Samples of
    /// the run that the panel does not track are ignored.
    pub fn add_run(&mut self, run: &TraceSet) {
        let index: HashMap<&str, usize> =
            self.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let last = run.epoch_count();
        for (i, id) in run.sample_ids().iter().enumerate() {
            if let Some(&j) = index.get(id.as_str()) {
                let loss = run.row(i)[last];
                if run.membership()[i] {
                    self.in_losses[j].push(loss);
                } else {
                    self.out_losses[j].push(loss);
                }
            }
        }
        self.run_count += 1;
    }

    /// Builds a panel over the samples of the first run from a list of runs.
    pub fn from_runs<'a>(runs: impl IntoIterator<Item = &'a TraceSet>) -> Result<Self> {
        let mut runs = runs.into_iter().peekable();
        let first = runs.peek().ok_or(Error::EmptySample)?;
        let mut panel = Self::empty(first.sample_ids().to_vec())?;
        for run in runs {
            panel.add_run(run);
        }
        Ok(panel)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sample_ids.len();
        if self.in_losses.len() != n || self.out_losses.len() != n {
            return Err(Error::Shape("panel columns do not align with sample ids".into()));
        }
        check_unique(&self.sample_ids)?;
        for (id, (ins, outs)) in self.sample_ids.iter().zip(self.in_losses.iter().zip(&self.out_losses)) {
            if ins.len() + outs.len() > self.run_count {
                return Err(Error::InvalidTraces(format!(
                    "sample {id:?} has more observations than the {} shadow runs",
                    self.run_count
                )));
            }
            if ins.iter().chain(outs).any(|l| !l.is_finite() || *l < 0.0) {
                return Err(Error::InvalidTraces(format!("sample {id:?} has an invalid shadow loss")));
            }
        }
        Ok(())
    }
}

/// One score per sample from a predictor or an attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub predictor_name: String,
    pub sample_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub higher_is_riskier: bool,
}

impl ScoreVector {
    pub fn new(
        predictor_name: impl Into<String>,
        sample_ids: Vec<String>,
        scores: Vec<f64>,
        higher_is_riskier: bool,
    ) -> Result<Self> {
        if sample_ids.len() != scores.len() {
            return Err(Error::Shape(format!("{} ids but {} scores", sample_ids.len(), scores.len())));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::NonFinite(format!("score of sample {:?} is NaN", sample_ids[i])));
        }
        Ok(Self { predictor_name: predictor_name.into(), sample_ids, scores, higher_is_riskier })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores with the orientation folded in, so that larger always means riskier.
    pub fn oriented(&self) -> Vec<f64> {
        if self.higher_is_riskier {
            self.scores.clone()
        } else {
            self.scores.iter().map(|s| -s).collect()
        }
    }

    /// Keeps only the samples whose id is in `keep`, preserving order.
    pub fn restrict_to(&self, keep: &HashSet<&str>) -> Self {
        let (ids, scores) = self
            .sample_ids
            .iter()
            .zip(&self.scores)
            .filter(|(id, _)| keep.contains(id.as_str()))
            .map(|(id, &s)| (id.clone(), s))
            .unzip();
        Self { sample_ids: ids, scores, ..self.clone_header() }
    }

    /// Reorders the scores to follow `ids`. Every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> =
            self.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let scores = ids
            .iter()
            .map(|id| index.get(id.as_str()).map(|&i| self.scores[i]).ok_or_else(|| Error::UnknownSample(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sample_ids: ids.to_vec(), scores, ..self.clone_header() })
    }

    fn clone_header(&self) -> Self {
        Self {
            predictor_name: self.predictor_name.clone(),
            sample_ids: Vec::new(),
            scores: Vec::new(),
            higher_is_riskier: self.higher_is_riskier,
        }
    }
}

/// Members flagged by one attack at FPR level `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerableSet {
    pub attack_name: String,
    pub alpha: f64,
    /// Threshold that produced the set; `None` for sets derived from other
    /// sets (union, agreement).
    pub threshold: Option<f64>,
    pub members: BTreeSet<String>,
}

impl VulnerableSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.contains(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSettings {
    pub clip: f64,
    pub noise: f64,
}

/// Provenance of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub config_digest: String,
    pub member_mask: Vec<bool>,
    pub epoch_count: usize,
    pub dp: Option<DpSettings>,
}

pub(crate) fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidTraces(format!("duplicate sample id {id:?}")));
        }
    }
    Ok(())
}
