use super::dataset::ToyDataset;
use super::dp::l2_norm;
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::types::ScoreVector;

pub const LOSS: &str = "loss";
pub const CONFIDENCE: &str = "confidence";
pub const PARAM_GRAD_NORM: &str = "param_grad_norm";
pub const INPUT_GRAD_NORM: &str = "input_grad_norm";

/// Single-model baseline predictors, all oriented so higher means riskier.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineScores {
    pub loss: ScoreVector,
    /// Negated top-1 minus top-2 probability margin.
    pub confidence: ScoreVector,
    pub param_grad_norm: ScoreVector,
    pub input_grad_norm: ScoreVector,
}

impl BaselineScores {
    pub fn into_vec(self) -> Vec<ScoreVector> {
        vec![self.loss, self.confidence, self.param_grad_norm, self.input_grad_norm]
    }
}

/// Loss, confidence margin and gradient norms of `model` on every sample.
pub fn per_sample_metrics(model: &Mlp, dataset: &ToyDataset) -> Result<BaselineScores> {
    if model.input_dim() != dataset.dim() || model.n_classes() != dataset.n_classes() {
        return Err(Error::Shape(format!(
            "model maps {} -> {} but dataset has {} features and {} classes",
            model.input_dim(),
            model.n_classes(),
            dataset.dim(),
            dataset.n_classes()
        )));
    }
    let n = dataset.len();
    let mut ws = model.workspace();
    let mut grad = vec![0.0; model.param_count()];
    let mut input_grad = vec![0.0; dataset.dim()];
    let (mut loss, mut confidence, mut pgn, mut ign) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let label = dataset.labels[i];
        loss.push(model.forward(dataset.x(i), label, &mut ws));
        confidence.push(-top_two_margin(ws.probs()));
        model.backward(label, &mut ws, &mut grad, Some(&mut input_grad));
        pgn.push(l2_norm(&grad));
        ign.push(l2_norm(&input_grad));
    }
    let ids = &dataset.sample_ids;
    let make = |name: &str, scores: Vec<f64>| ScoreVector::new(name, ids.clone(), scores, true);
    Ok(BaselineScores {
        loss: make(LOSS, loss)?,
        confidence: make(CONFIDENCE, confidence)?,
        param_grad_norm: make(PARAM_GRAD_NORM, pgn)?,
        input_grad_norm: make(INPUT_GRAD_NORM, ign)?,
    })
}

fn top_two_margin(probs: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    first - second
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::dataset::generate_synthetic;
    use crate::trainer::train::{train, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn saturated_softmax_has_unit_margin_and_flat_gradient() {
        // Logits (40·x0, -40·x0): a confident, correct prediction for x0 = 1.
        let model = Mlp::from_params(vec![1, 2], vec![40.0, -40.0, 0.0, 0.0]).unwrap();
        let mut data = generate_synthetic(4, 1, 2, 0.0, 1).unwrap();
        data.features = vec![1.0; 4];
        data.labels = vec![0; 4];
        let m = per_sample_metrics(&model, &data).unwrap();
        assert!((m.confidence.scores[0] + 1.0).abs() < 1e-12);
        assert!(m.param_grad_norm.scores[0] < 1e-12);
        assert!(m.loss.scores[0] < 1e-12);
    }

    #[test]
    fn gradient_norms_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = generate_synthetic(12, 3, 3, 0.0, 4).unwrap();
        let model = Mlp::new(&[3, 7, 3], &mut rng);
        let m = per_sample_metrics(&model, &data).unwrap();
        let h = 1e-6;
        let loss_at = |net: &Mlp, x: &[f64], y: usize| net.forward(x, y, &mut net.workspace());
        for i in 0..data.len() {
            let (x, y) = (data.x(i), data.labels[i]);
            let pg: Vec<f64> = (0..model.param_count())
                .map(|k| {
                    let mut up = model.clone();
                    up.params_mut()[k] += h;
                    let mut down = model.clone();
                    down.params_mut()[k] -= h;
                    (loss_at(&up, x, y) - loss_at(&down, x, y)) / (2.0 * h)
                })
                .collect();
            let xg: Vec<f64> = (0..x.len())
                .map(|k| {
                    let (mut up, mut down) = (x.to_vec(), x.to_vec());
                    up[k] += h;
                    down[k] -= h;
                    (loss_at(&model, &up, y) - loss_at(&model, &down, y)) / (2.0 * h)
                })
                .collect();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            assert!(rel(m.param_grad_norm.scores[i], l2_norm(&pg)) < 1e-4);
            assert!(rel(m.input_grad_norm.scores[i], l2_norm(&xg)) < 1e-4);
        }
    }

    #[test]
    fn loss_matches_final_trace_column() {
        let data = generate_synthetic(90, 6, 3, 0.1, 2).unwrap();
        let mask: Vec<bool> = (0..90).map(|i| i % 2 == 0).collect();
        let cfg = TrainConfig { hidden: vec![12], epochs: 6, batch_size: 9, ..TrainConfig::default() };
        let run = train(&data, &mask, &cfg).unwrap();
        let m = per_sample_metrics(&run.model, &data).unwrap();
        for (a, b) in m.loss.scores.iter().zip(run.traces.final_losses()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(m.into_vec().iter().all(|s| s.higher_is_riskier && s.len() == 90));
    }

    #[test]
    fn margin_of_two_largest() {
        assert!((top_two_margin(&[0.1, 0.6, 0.3]) - 0.3).abs() < 1e-15);
        assert_eq!(top_two_margin(&[0.5, 0.5]), 0.0);
    }
}
