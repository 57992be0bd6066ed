//! Reference membership-inference attacks.
//!
//! Each attack turns a target model's final-epoch losses, and for the
//! shadow-based attacks a [`ShadowPanel`], into one membership score per
//! sample where larger means "more likely a member". Samples without enough
//! shadow observations are reported in [`AttackOutcome::excluded`] instead
//! of being scored.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{loss_to_logit_confidence, LOGIT_EPS};
use crate::types::{ScoreVector, ShadowPanel, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Loss,
    Lira,
    AttackR,
    Rmia,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Loss, AttackKind::Lira, AttackKind::AttackR, AttackKind::Rmia];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Loss => "loss",
            AttackKind::Lira => "lira",
            AttackKind::AttackR => "attack_r",
            AttackKind::Rmia => "rmia",
        }
    }

    pub fn needs_shadows(self) -> bool {
        !matches!(self, AttackKind::Loss)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "loss" => Ok(AttackKind::Loss),
            "lira" => Ok(AttackKind::Lira),
            "attack_r" | "attackr" => Ok(AttackKind::AttackR),
            "rmia" => Ok(AttackKind::Rmia),
            _ => Err(Error::Config(format!("unknown attack {s:?}"))),
        }
    }
}

/// How LiRA estimates the spread of the in/out logit distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// One variance per sample and side.
    #[default]
    PerSample,
    /// Mean of the per-sample variances, shared by all samples.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub attack: AttackKind,
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    #[serde(default = "default_gamma")]
    pub rmia_gamma: f64,
    /// Reference population for RMIA; empty means every target member.
    #[serde(default)]
    pub rmia_reference_ids: Vec<String>,
    #[serde(default = "default_min_obs")]
    pub min_shadow_observations: usize,
}

fn default_variance_floor() -> f64 {
    1e-8
}
fn default_gamma() -> f64 {
    1.0
}
fn default_min_obs() -> usize {
    2
}

impl AttackConfig {
    pub fn new(attack: AttackKind) -> Self {
        Self {
            attack,
            variance_floor: default_variance_floor(),
            variance_mode: VarianceMode::default(),
            rmia_gamma: default_gamma(),
            rmia_reference_ids: Vec::new(),
            min_shadow_observations: default_min_obs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config(format!("variance_floor must be > 0, got {}", self.variance_floor)));
        }
        if !(self.rmia_gamma > 0.0) {
            return Err(Error::Config(format!("rmia_gamma must be > 0, got {}", self.rmia_gamma)));
        }
        if self.min_shadow_observations == 0 {
            return Err(Error::Config("min_shadow_observations must be >= 1".into()));
        }
        Ok(())
    }
}

/// A sample that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub scores: ScoreVector,
    pub excluded: Vec<Excluded>,
}

fn check_target(panel: &ShadowPanel, target_losses: &[f64]) -> Result<()> {
    if panel.len() != target_losses.len() {
        return Err(Error::Shape(format!(
            "panel has {} samples but {} target losses were given",
            panel.len(),
            target_losses.len()
        )));
    }
    if let Some(l) = target_losses.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::domain(format!("target loss {l} is not a finite non-negative value")));
    }
    Ok(())
}

/// LOSS attack: score `−ℓ_S`, no shadow models.
pub fn loss_attack(sample_ids: &[String], final_losses: &[f64]) -> Result<ScoreVector> {
    ScoreVector::new(AttackKind::Loss.name(), sample_ids.to_vec(), final_losses.iter().map(|l| -l).collect(), true)
}

struct Gaussian {
    mean: f64,
    var: f64,
}

impl Gaussian {
    fn fit(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, var }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.var).ln() - (x - self.mean).powi(2) / (2.0 * self.var)
    }
}

/// Online LiRA on logit-transformed losses.
///
/// The score is `log N(t; μ_in, σ²_in) − log N(t; μ_out, σ²_out)` with `t`
/// the transformed target loss.
pub fn lira_online(panel: &ShadowPanel, target_losses: &[f64], cfg: &AttackConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_target(panel, target_losses)?;
    let min_obs = cfg.min_shadow_observations;

    let logits = |xs: &[f64]| xs.iter().map(|&l| loss_to_logit_confidence(l)).collect::<Result<Vec<_>>>();
    let mut fits = Vec::with_capacity(panel.len());
    let mut excluded = Vec::new();
    for (i, id) in panel.sample_ids.iter().enumerate() {
        let (ins, outs) = (&panel.in_losses[i], &panel.out_losses[i]);
        if ins.len() < min_obs || outs.len() < min_obs {
            excluded.push(Excluded {
                sample_id: id.clone(),
                reason: format!("{} in / {} out shadow observations, need {min_obs} each", ins.len(), outs.len()),
            });
            fits.push(None);
            continue;
        }
        fits.push(Some((Gaussian::fit(&logits(ins)?), Gaussian::fit(&logits(outs)?))));
    }

    if cfg.variance_mode == VarianceMode::Global {
        let fitted: Vec<_> = fits.iter().flatten().collect();
        if !fitted.is_empty() {
            let k = fitted.len() as f64;
            let var_in = fitted.iter().map(|(g, _)| g.var).sum::<f64>() / k;
            let var_out = fitted.iter().map(|(_, g)| g.var).sum::<f64>() / k;
            for (g_in, g_out) in fits.iter_mut().flatten() {
                g_in.var = var_in;
                g_out.var = var_out;
            }
        }
    }

    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        let Some((mut g_in, mut g_out)) = fit else { continue };
        g_in.var = g_in.var.max(cfg.variance_floor);
        g_out.var = g_out.var.max(cfg.variance_floor);
        let t = loss_to_logit_confidence(target_losses[i])?;
        ids.push(panel.sample_ids[i].clone());
        scores.push(g_in.log_pdf(t) - g_out.log_pdf(t));
    }
    Ok(AttackOutcome { scores: ScoreVector::new(AttackKind::Lira.name(), ids, scores, true)?, excluded })
}

/// Attack R: fraction of the sample's out-shadow losses strictly greater
/// than the target loss.
pub fn attack_r(
    sample_ids: &[String],
    out_losses: &[Vec<f64>],
    target_losses: &[f64],
    min_shadow_observations: usize,
) -> Result<AttackOutcome> {
    if sample_ids.len() != out_losses.len() || sample_ids.len() != target_losses.len() {
        return Err(Error::Shape("attack_r inputs are not aligned".into()));
    }
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for ((id, outs), &target) in sample_ids.iter().zip(out_losses).zip(target_losses) {
        if outs.len() < min_shadow_observations.max(1) {
            excluded.push(Excluded {
                sample_id: id.clone(),
                reason: format!("{} out shadow observations, need {min_shadow_observations}", outs.len()),
            });
            continue;
        }
        let greater = outs.iter().filter(|&&l| l > target).count();
        ids.push(id.clone());
        scores.push(greater as f64 / outs.len() as f64);
    }
    Ok(AttackOutcome { scores: ScoreVector::new(AttackKind::AttackR.name(), ids, scores, true)?, excluded })
}

/// RMIA with out-model reference probabilities.
///
/// `ratio(u) = exp(−ℓ_target(u)) / mean_out(exp(−ℓ))`; the score of `x` is the
/// fraction of reference samples `z ≠ x` with `ratio(x)/ratio(z) ≥ γ`.
pub fn rmia(panel: &ShadowPanel, target_losses: &[f64], cfg: &AttackConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_target(panel, target_losses)?;
    if cfg.rmia_reference_ids.is_empty() {
        return Err(Error::Config("RMIA needs a non-empty reference set".into()));
    }
    let min_obs = cfg.min_shadow_observations;
    let ratios: Vec<Option<f64>> = panel
        .out_losses
        .iter()
        .zip(target_losses)
        .map(|(outs, &t)| {
            if outs.len() < min_obs {
                return None;
            }
            let p_ref = (outs.iter().map(|l| (-l).exp()).sum::<f64>() / outs.len() as f64).max(LOGIT_EPS);
            Some((-t).exp() / p_ref)
        })
        .collect();

    let index = panel.index_of();
    let mut refs: Vec<(usize, f64)> = Vec::with_capacity(cfg.rmia_reference_ids.len());
    for id in &cfg.rmia_reference_ids {
        let &j = index.get(id.as_str()).ok_or_else(|| Error::UnknownSample(id.clone()))?;
        if let Some(r) = ratios[j] {
            refs.push((j, r));
        }
    }
    if refs.is_empty() {
        return Err(Error::Config("no RMIA reference sample has out-shadow observations".into()));
    }

    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for (i, ratio) in ratios.iter().enumerate() {
        let Some(rx) = *ratio else {
            excluded.push(Excluded {
                sample_id: panel.sample_ids[i].clone(),
                reason: format!("{} out shadow observations, need {min_obs}", panel.out_losses[i].len()),
            });
            continue;
        };
        let (mut total, mut dominated) = (0usize, 0usize);
        for &(j, rz) in &refs {
            if j == i {
                continue;
            }
            total += 1;
            if rx / rz >= cfg.rmia_gamma {
                dominated += 1;
            }
        }
        if total == 0 {
            excluded.push(Excluded {
                sample_id: panel.sample_ids[i].clone(),
                reason: "reference set contains only the sample itself".into(),
            });
            continue;
        }
        ids.push(panel.sample_ids[i].clone());
        scores.push(dominated as f64 / total as f64);
    }
    Ok(AttackOutcome { scores: ScoreVector::new(AttackKind::Rmia.name(), ids, scores, true)?, excluded })
}

/// Runs the configured attack against the target run's final-epoch losses.
///
/// Scores come back in the order of `target`; the panel may list samples in
/// any order but must cover every target sample.
pub fn run_attack(cfg: &AttackConfig, panel: Option<&ShadowPanel>, target: &TraceSet) -> Result<AttackOutcome> {
    cfg.validate()?;
    let finals = target.final_losses();
    if cfg.attack == AttackKind::Loss {
        return Ok(AttackOutcome { scores: loss_attack(target.sample_ids(), &finals)?, excluded: Vec::new() });
    }
    let panel = panel.ok_or_else(|| Error::Config(format!("attack {} needs a shadow panel", cfg.attack)))?;
    let aligned = align_panel(panel, target)?;
    match cfg.attack {
        AttackKind::Lira => lira_online(&aligned, &finals, cfg),
        AttackKind::AttackR => {
            attack_r(&aligned.sample_ids, &aligned.out_losses, &finals, cfg.min_shadow_observations)
        }
        AttackKind::Rmia => {
            if cfg.rmia_reference_ids.is_empty() {
                let cfg = AttackConfig { rmia_reference_ids: target.member_ids(), ..cfg.clone() };
                rmia(&aligned, &finals, &cfg)
            } else {
                rmia(&aligned, &finals, cfg)
            }
        }
        AttackKind::Loss => unreachable!(),
    }
}

/// Panel restricted and reordered to the target's samples.
fn align_panel(panel: &ShadowPanel, target: &TraceSet) -> Result<ShadowPanel> {
    if panel.sample_ids == target.sample_ids() {
        return Ok(panel.clone());
    }
    let index = panel.index_of();
    let mut in_losses = Vec::with_capacity(target.len());
    let mut out_losses = Vec::with_capacity(target.len());
    for id in target.sample_ids() {
        let &j = index.get(id.as_str()).ok_or_else(|| Error::UnknownSample(id.clone()))?;
        in_losses.push(panel.in_losses[j].clone());
        out_losses.push(panel.out_losses[j].clone());
    }
    Ok(ShadowPanel { sample_ids: target.sample_ids().to_vec(), in_losses, out_losses, run_count: panel.run_count })
}
