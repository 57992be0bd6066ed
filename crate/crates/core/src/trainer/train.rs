use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::ToyDataset;
use super::dp::GradientAccumulator;
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::types::{DpSettings, RunManifest, ShadowPanel, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    Cosine,
}

impl LrSchedule {
    /// Learning rate used during epoch `epoch` (0-based) of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => base * 0.5 * (1.0 + (PI * epoch as f64 / epochs as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub dp: Option<DpSettings>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            epochs: 60,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            seed: 0,
            schedule: LrSchedule::Constant,
            dp: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if let Some(dp) = self.dp {
            if !(dp.clip > 0.0 && dp.clip.is_finite()) {
                return bad(format!("DP clip must be positive, got {}", dp.clip));
            }
            if !(dp.noise >= 0.0 && dp.noise.is_finite()) {
                return bad(format!("DP noise must be non-negative, got {}", dp.noise));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self, dim: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(n_classes);
        sizes
    }
}

/// Per-epoch averages and final accuracies of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Mean member loss for columns 0..=S.
    pub train_loss: Vec<f64>,
    /// Mean non-member loss for columns 0..=S; empty without non-members.
    pub test_loss: Vec<f64>,
    pub member_accuracy: f64,
    pub non_member_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub traces: TraceSet,
    pub model: Mlp,
    pub manifest: RunManifest,
    pub summary: TrainSummary,
}

/// Trains an MLP on the masked samples and records every sample's loss after
/// each epoch.
///
/// One seeded stream drives initialisation, the per-epoch shuffle and any DP
/// noise, so the result is a pure function of its inputs.
pub fn train(dataset: &ToyDataset, member_mask: &[bool], config: &TrainConfig) -> Result<TrainedRun> {
    config.validate()?;
    dataset.validate()?;
    let n = dataset.len();
    if member_mask.len() != n {
        return Err(Error::Shape(format!("member mask has {} entries for {n} samples", member_mask.len())));
    }
    let mut members: Vec<usize> = (0..n).filter(|&i| member_mask[i]).collect();
    if members.len() < config.batch_size {
        return Err(Error::Config(format!(
            "member mask selects {} samples, fewer than batch size {}",
            members.len(),
            config.batch_size
        )));
    }

    let epochs = config.epochs;
    let width = epochs + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mlp::new(&config.layer_sizes(dataset.dim(), dataset.n_classes()), &mut rng);
    let mut ws = model.workspace();
    let dim = model.param_count();
    let mut grad = vec![0.0; dim];
    let mut update = vec![0.0; dim];
    let mut velocity = vec![0.0; dim];
    let mut acc = GradientAccumulator::new(dim, config.dp);

    let mut losses = vec![0.0; n * width];
    let mut correct = vec![false; n];
    evaluation_pass(&model, dataset, 0, width, &mut losses, &mut correct)?;

    for epoch in 0..epochs {
        let lr = config.schedule.rate(config.learning_rate, epoch, epochs);
        members.shuffle(&mut rng);
        for batch in members.chunks(config.batch_size) {
            for &i in batch {
                let loss = model.forward(dataset.x(i), dataset.labels[i], &mut ws);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch: epoch + 1, sample: dataset.sample_ids[i].clone(), loss });
                }
                model.backward(dataset.labels[i], &mut ws, &mut grad, None);
                acc.add(&grad);
            }
            acc.finish(&mut rng, &mut update);
            let (mu, wd) = (config.momentum, config.weight_decay);
            for ((p, v), u) in model.params_mut().iter_mut().zip(&mut velocity).zip(&update) {
                *v = mu * *v + u + wd * *p;
                *p -= lr * *v;
            }
        }
        evaluation_pass(&model, dataset, epoch + 1, width, &mut losses, &mut correct)?;
    }

    let traces = TraceSet::from_flat(dataset.sample_ids.clone(), losses, member_mask.to_vec(), epochs)?;
    let (train_loss, test_loss) = traces.split_averages();
    let accuracy = |want: bool| {
        let (hit, total) = (0..n)
            .filter(|&i| member_mask[i] == want)
            .fold((0usize, 0usize), |(h, t), i| (h + correct[i] as usize, t + 1));
        (total > 0).then(|| hit as f64 / total as f64)
    };
    let summary = TrainSummary {
        train_loss,
        test_loss,
        member_accuracy: accuracy(true).unwrap_or(0.0),
        non_member_accuracy: accuracy(false),
    };
    let config_digest = config_digest(dataset, config, member_mask);
    let manifest = RunManifest {
        run_id: format!("run-{}-{}", &config_digest[..12], config.seed),
        seed: config.seed,
        config_digest,
        member_mask: member_mask.to_vec(),
        epoch_count: epochs,
        dp: config.dp,
    };
    Ok(TrainedRun { traces, model, manifest, summary })
}

fn evaluation_pass(
    model: &Mlp,
    dataset: &ToyDataset,
    column: usize,
    width: usize,
    losses: &mut [f64],
    correct: &mut [bool],
) -> Result<()> {
    let mut ws = model.workspace();
    for i in 0..dataset.len() {
        let loss = model.forward(dataset.x(i), dataset.labels[i], &mut ws);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: column, sample: dataset.sample_ids[i].clone(), loss });
        }
        losses[i * width + column] = loss;
        correct[i] = model.predict_class(&ws) == dataset.labels[i];
    }
    Ok(())
}

/// Hex SHA-256 of the dataset spec, the config without its seed, and the mask.
///
/// Runs that differ only in seed share a digest.
pub fn config_digest(dataset: &ToyDataset, config: &TrainConfig, member_mask: &[bool]) -> String {
    let mut unseeded = config.clone();
    unseeded.seed = 0;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&dataset.spec).expect("spec serialises"));
    hasher.update(serde_json::to_vec(&unseeded).expect("config serialises"));
    hasher.update(member_mask.iter().map(|&m| if m { b'1' } else { b'0' }).collect::<Vec<u8>>());
    hex(&hasher.finalize())
}

/// Hex SHA-256 of the dataset spec and the config without its seed.
///
/// Identifies the training setup shared by a target and its shadow runs.
pub fn setup_digest(dataset: &ToyDataset, config: &TrainConfig) -> String {
    let mut unseeded = config.clone();
    unseeded.seed = 0;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&dataset.spec).expect("spec serialises"));
    hasher.update(serde_json::to_vec(&unseeded).expect("config serialises"));
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exactly `n / 2` members chosen uniformly at random.
pub fn random_half_mask(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut mask = vec![false; n];
    for i in sample(rng, n, n / 2) {
        mask[i] = true;
    }
    mask
}

/// Trains `n_shadows` runs on independent half/half splits and folds their
/// final losses into a panel.
///
/// Masks and run seeds are drawn up front from `seed`; runs then execute in
/// parallel and the panel is assembled in run order.
pub fn train_shadows(
    dataset: &ToyDataset,
    n_shadows: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Vec<(RunManifest, TraceSet)>, ShadowPanel)> {
    if n_shadows < 2 {
        return Err(Error::Config(format!("need at least 2 shadow runs, got {n_shadows}")));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(Vec<bool>, u64)> =
        (0..n_shadows).map(|_| (random_half_mask(dataset.len(), &mut master), master.gen())).collect();
    let runs: Vec<(RunManifest, TraceSet)> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(k, (mask, run_seed))| {
            let cfg = TrainConfig { seed: run_seed, ..config.clone() };
            let mut run = train(dataset, &mask, &cfg)?;
            run.manifest.run_id = format!("shadow-{k:03}");
            Ok((run.manifest, run.traces))
        })
        .collect::<Result<_>>()?;
    let mut panel = ShadowPanel::empty(dataset.sample_ids.clone())?;
    for (_, traces) in &runs {
        panel.add_run(traces);
    }
    Ok((runs, panel))
}
