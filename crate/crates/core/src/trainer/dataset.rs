use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::check_unique;

/// Offset of each class mean along its own axis.
pub const CLASS_SEPARATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSpec {
    pub n: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub label_noise_fraction: f64,
    pub seed: u64,
}

/// Labelled feature vectors with stable string ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub spec: GenerationSpec,
    pub sample_ids: Vec<String>,
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Ids whose label was re-drawn to a wrong class.
    pub relabeled: Vec<String>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.spec.dim..(i + 1) * self.spec.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.sample_ids.len() != n || self.features.len() != n * self.spec.dim {
            return Err(Error::Shape("dataset columns do not align".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.spec.n_classes) {
            return Err(Error::domain(format!("label {l} outside [0, {})", self.spec.n_classes)));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        check_unique(&self.sample_ids)
    }
}

/// Gaussian class clusters with a seeded fraction of wrong labels.
///
/// Sample `i` belongs to class `i mod n_classes`; features are the class mean
/// plus unit-variance noise. With `dim ≥ n_classes` the mean of class `c` is
/// `CLASS_SEPARATION · e_c`; otherwise each mean is a random direction of the
/// same length. Exactly `round(label_noise_fraction · n)` samples get a label
/// drawn uniformly from the other classes.
pub fn generate_synthetic(n: usize, dim: usize, n_classes: usize, label_noise_fraction: f64, seed: u64) -> Result<ToyDataset> {
    if n_classes < 2 {
        return Err(Error::domain("need at least two classes"));
    }
    if n < 2 * n_classes {
        return Err(Error::domain(format!("need n >= 2·n_classes, got n = {n}, n_classes = {n_classes}")));
    }
    if dim == 0 {
        return Err(Error::domain("feature dimension must be positive"));
    }
    if !(0.0..1.0).contains(&label_noise_fraction) {
        return Err(Error::domain(format!("label noise fraction {label_noise_fraction} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            if dim >= n_classes {
                let mut m = vec![0.0; dim];
                m[c] = CLASS_SEPARATION;
                m
            } else {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * CLASS_SEPARATION / norm).collect()
            }
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let mut features = Vec::with_capacity(n * dim);
    for &label in &labels {
        features.extend(means[label].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
    }
    let sample_ids: Vec<String> = (0..n).map(|i| format!("x{i:05}")).collect();

    let n_noisy = (label_noise_fraction * n as f64).round() as usize;
    let mut noisy: Vec<usize> = sample(&mut rng, n, n_noisy).into_vec();
    noisy.sort_unstable();
    for &i in &noisy {
        let shift = rng.gen_range(1..n_classes);
        labels[i] = (labels[i] + shift) % n_classes;
    }
    let relabeled = noisy.iter().map(|&i| sample_ids[i].clone()).collect();

    Ok(ToyDataset {
        spec: GenerationSpec { n, dim, n_classes, label_noise_fraction, seed },
        sample_ids,
        features,
        labels,
        relabeled,
    })
}
