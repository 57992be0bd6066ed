//! Fully connected ReLU network with a softmax output.
//!
//! All parameters live in one flat vector, layer by layer: the `out × in`
//! weight matrix (row-major) followed by the `out` biases. Gradients use the
//! same layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of one forward pass, reused between calls.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// `acts[0]` is the input; `acts[l]` the post-ReLU output of layer `l`
    /// for hidden layers and the logits for the last one.
    acts: Vec<Vec<f64>>,
    probs: Vec<f64>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    /// Class probabilities from the most recent forward pass.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("non-empty")
    }
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need an input and an output size");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1] + w[1]).map(|_| rng.gen_range(-bound..bound)));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(&sizes)).then_some(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.sizes.iter().map(|&s| vec![0.0; s]).collect(),
            probs: vec![0.0; self.n_classes()],
            deltas: self.sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Runs the network on `x` and returns the cross-entropy loss for `label`.
    pub fn forward(&self, x: &[f64], label: usize, ws: &mut Workspace) -> f64 {
        debug_assert_eq!(x.len(), self.sizes[0]);
        ws.acts[0].copy_from_slice(x);
        let last = self.sizes.len() - 2;
        let mut offset = 0;
        for l in 0..=last {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l];
            let output = &mut after[0];
            for (o, (row, &b)) in output.iter_mut().zip(weights.chunks_exact(fan_in).zip(bias)) {
                let z = b + dot(row, input);
                *o = if l < last { z.max(0.0) } else { z };
            }
        }
        let logits = ws.acts.last().expect("non-empty");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for (p, z) in ws.probs.iter_mut().zip(logits) {
            *p = (z - lse).exp();
        }
        lse - logits[label]
    }

    /// Backpropagates the loss of the last [`forward`](Self::forward) call.
    ///
    /// Writes `∇_θ ℓ` into `param_grad` (overwriting it) and, when given,
    /// `∇_x ℓ` into `input_grad`.
    pub fn backward(&self, label: usize, ws: &mut Workspace, param_grad: &mut [f64], input_grad: Option<&mut [f64]>) {
        debug_assert_eq!(param_grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        {
            let top = &mut ws.deltas[n_layers];
            top.copy_from_slice(&ws.probs);
            top[label] -= 1.0;
        }
        let mut end = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = end - (fan_in * fan_out + fan_out);
            let weights = &self.params[start..start + fan_in * fan_out];
            let (w_grad, b_grad) = param_grad[start..end].split_at_mut(fan_in * fan_out);
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta_out = &upper[0];
            let input = &ws.acts[l];

            b_grad.copy_from_slice(delta_out);
            for (g_row, &d) in w_grad.chunks_exact_mut(fan_in).zip(delta_out) {
                if d == 0.0 {
                    g_row.fill(0.0);
                } else {
                    for (g, &a) in g_row.iter_mut().zip(input) {
                        *g = d * a;
                    }
                }
            }
            if l > 0 || input_grad.is_some() {
                let delta_in = &mut lower[l];
                delta_in.fill(0.0);
                for (row, &d) in weights.chunks_exact(fan_in).zip(delta_out) {
                    if d != 0.0 {
                        axpy(d, row, delta_in);
                    }
                }
                if l > 0 {
                    // ReLU derivative from the stored post-activation.
                    for (di, &a) in delta_in.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *di = 0.0;
                        }
                    }
                }
            }
            end = start;
        }
        if let Some(g) = input_grad {
            g.copy_from_slice(&ws.deltas[0]);
        }
    }

    /// Predicted class of the most recent forward pass.
    pub fn predict_class(&self, ws: &Workspace) -> usize {
        argmax(ws.probs())
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
