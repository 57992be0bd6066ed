//! Per-sample gradient clipping and Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::types::DpSettings;

/// Sums per-sample gradients of one mini-batch and turns them into an update.
///
/// Without DP settings gradients are summed as-is. With settings each gradient
/// is scaled by `min(1, C/‖g‖₂)` first, and `finish` adds `N(0, (σC)²)` noise
/// to every coordinate of the sum before dividing by the batch size.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    sum: Vec<f64>,
    count: usize,
    dp: Option<DpSettings>,
}

impl GradientAccumulator {
    pub fn new(dim: usize, dp: Option<DpSettings>) -> Self {
        Self { sum: vec![0.0; dim], count: 0, dp }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.sum.len());
        self.count += 1;
        match self.dp {
            None => {
                for (s, g) in self.sum.iter_mut().zip(grad) {
                    *s += g;
                }
            }
            Some(dp) => {
                let scale = clip_factor(l2_norm(grad), dp.clip);
                for (s, g) in self.sum.iter_mut().zip(grad) {
                    *s += scale * g;
                }
            }
        }
    }

    /// Raw (clipped) sum collected so far, before noise.
    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// Writes the averaged, noised update into `out` and resets the accumulator.
    ///
    /// No noise is drawn when `σ = 0`, so the generator is left untouched.
    pub fn finish(&mut self, rng: &mut impl Rng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.sum.len());
        let batch = self.count.max(1) as f64;
        let std = self.dp.map_or(0.0, |dp| dp.noise * dp.clip);
        if std > 0.0 {
            for (o, s) in out.iter_mut().zip(&self.sum) {
                let z: f64 = rng.sample(StandardNormal);
                *o = (s + std * z) / batch;
            }
        } else {
            for (o, s) in out.iter_mut().zip(&self.sum) {
                *o = s / batch;
            }
        }
        self.sum.fill(0.0);
        self.count = 0;
    }
}

/// One DP-SGD batch update from explicit per-sample gradients.
pub fn dp_step_modifier(per_sample_gradients: &[Vec<f64>], clip: f64, noise: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(clip > 0.0 && noise >= 0.0, "need C > 0 and σ ≥ 0");
    let dim = per_sample_gradients.first().map_or(0, Vec::len);
    let mut acc = GradientAccumulator::new(dim, Some(DpSettings { clip, noise }));
    for g in per_sample_gradients {
        acc.add(g);
    }
    let mut out = vec![0.0; dim];
    acc.finish(rng, &mut out);
    out
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}
