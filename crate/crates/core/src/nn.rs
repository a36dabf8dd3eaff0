//! Minimal dense-network numerics: layers, activations, losses, inverse-
//! frequency class weights, the optimizer, and finite-difference gradient
//! checking.
//!
//! Parameters are stored as f32; all arithmetic runs in f64 so analytic
//! gradients survive the finite-difference check.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("targets are not one-hot in row {0}")]
    NotOneHot(usize),
    #[error("class {0} has zero count; exclude the class or supply a smoothing override")]
    ZeroCount(usize),
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

/// A fully connected layer: y = act(W x + b), W stored row-major out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: vec![0.0; input_dim * output_dim],
            biases: vec![0.0; output_dim],
            input_dim,
            output_dim,
            activation,
        }
    }

    /// Symmetric-uniform fan-based init (Glorot), zero biases, seeded.
    pub fn init(input_dim: usize, output_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weights = (0..input_dim * output_dim)
            .map(|_| rng.gen_range(-bound..bound) as f32)
            .collect();
        DenseLayer {
            weights,
            biases: vec![0.0; output_dim],
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Gradients for one dense layer, f64.
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub d_weights: Vec<f64>,
    pub d_biases: Vec<f64>,
    pub d_input: Vec<f64>,
}

fn pre_activation(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0f64; layer.output_dim];
    for i in 0..layer.output_dim {
        let mut acc = layer.biases[i] as f64;
        let row = &layer.weights[i * layer.input_dim..(i + 1) * layer.input_dim];
        for (w, xv) in row.iter().zip(x) {
            acc += *w as f64 * xv;
        }
        z[i] = acc;
    }
    z
}

pub fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != layer.input_dim {
        return Err(NnError::ShapeMismatch {
            context: "dense_forward input",
            expected: layer.input_dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("dense_forward input".to_string()));
    }
    let mut z = pre_activation(layer, x);
    if layer.activation == Activation::Relu {
        for v in &mut z {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(z)
}

/// Analytic gradients of y = act(W x + b) given dL/dy.
pub fn dense_backward(layer: &DenseLayer, x: &[f64], dy: &[f64]) -> Result<DenseGrad, NnError> {
    if x.len() != layer.input_dim {
        return Err(NnError::ShapeMismatch {
            context: "dense_backward input",
            expected: layer.input_dim,
            got: x.len(),
        });
    }
    if dy.len() != layer.output_dim {
        return Err(NnError::ShapeMismatch {
            context: "dense_backward dy",
            expected: layer.output_dim,
            got: dy.len(),
        });
    }
    let z = pre_activation(layer, x);
    let dz: Vec<f64> = match layer.activation {
        Activation::None => dy.to_vec(),
        // Subgradient 0 at z == 0.
        Activation::Relu => dy
            .iter()
            .zip(&z)
            .map(|(&g, &zv)| if zv > 0.0 { g } else { 0.0 })
            .collect(),
    };
    let mut d_weights = vec![0.0f64; layer.weights.len()];
    let mut d_input = vec![0.0f64; layer.input_dim];
    for i in 0..layer.output_dim {
        let gi = dz[i];
        let row = &layer.weights[i * layer.input_dim..(i + 1) * layer.input_dim];
        let d_row = &mut d_weights[i * layer.input_dim..(i + 1) * layer.input_dim];
        for j in 0..layer.input_dim {
            d_row[j] = gi * x[j];
            d_input[j] += gi * row[j] as f64;
        }
    }
    Ok(DenseGrad {
        d_weights,
        d_biases: dz,
        d_input,
    })
}

pub fn sigmoid(z: &[f64]) -> Result<Vec<f64>, NnError> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("sigmoid input".to_string()));
    }
    Ok(z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect())
}

/// Shift-invariant softmax; the output sums to 1 within 1e-12.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>, NnError> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("softmax input".to_string()));
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// A scalar loss with its gradient w.r.t. the predictions it was computed on.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    /// Same shape as the prediction batch.
    pub grad: Vec<Vec<f64>>,
    /// Number of summed terms behind the mean reduction (batch for CE,
    /// batch x labels for BCE).
    pub terms: usize,
}

impl LossValue {
    /// The sum-form value: terms x mean-form.
    pub fn sum_form(&self) -> f64 {
        self.value * self.terms as f64
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy, mean over batch and labels, probabilities clamped to
/// [eps, 1-eps]. The gradient is exact for the clamped map (zero where the
/// clamp is active).
pub fn bce_loss(p: &[Vec<f64>], y: &[Vec<f64>]) -> Result<LossValue, NnError> {
    if p.len() != y.len() {
        return Err(NnError::ShapeMismatch {
            context: "bce batch",
            expected: y.len(),
            got: p.len(),
        });
    }
    let terms: usize = p.iter().map(|row| row.len()).sum();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (i, (p_row, y_row)) in p.iter().zip(y).enumerate() {
        if p_row.len() != y_row.len() {
            return Err(NnError::ShapeMismatch {
                context: "bce row",
                expected: y_row.len(),
                got: p_row.len(),
            });
        }
        let mut g_row = vec![0.0f64; p_row.len()];
        for (j, (&pv, &yv)) in p_row.iter().zip(y_row).enumerate() {
            let pc = clamp_prob(pv);
            value -= yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln();
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&pv) {
                g_row[j] = (pc - yv) / (pc * (1.0 - pc)) / terms as f64;
            }
        }
        let _ = i;
        grad.push(g_row);
    }
    Ok(LossValue {
        value: value / terms as f64,
        grad,
        terms,
    })
}

/// Positive per-class weights normalized to mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

/// Inverse-frequency weights: raw_k = N / (K * count_k), then normalized so
/// the mean weight is 1. Invariant to uniform scaling of the counts.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights, NnError> {
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(NnError::ZeroCount(k));
    }
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let k = counts.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| total / (k * c as f64)).collect();
    let mean = raw.iter().sum::<f64>() / k;
    Ok(ClassWeights {
        weights: raw.iter().map(|w| w / mean).collect(),
    })
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; k],
        }
    }
}

/// Weighted cross-entropy over softmax outputs with one-hot targets, mean
/// over the batch: (1/N) * sum_i -w_{k(i)} log p_{i,k(i)}.
pub fn weighted_ce(
    p: &[Vec<f64>],
    y: &[Vec<f64>],
    weights: &ClassWeights,
) -> Result<LossValue, NnError> {
    if p.len() != y.len() {
        return Err(NnError::ShapeMismatch {
            context: "weighted_ce batch",
            expected: y.len(),
            got: p.len(),
        });
    }
    let n = p.len();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (i, (p_row, y_row)) in p.iter().zip(y).enumerate() {
        if p_row.len() != weights.weights.len() || y_row.len() != p_row.len() {
            return Err(NnError::ShapeMismatch {
                context: "weighted_ce row",
                expected: weights.weights.len(),
                got: p_row.len(),
            });
        }
        let hot: Vec<usize> = y_row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect();
        if hot.len() != 1 || y_row[hot[0]] != 1.0 {
            return Err(NnError::NotOneHot(i));
        }
        let k = hot[0];
        let w = weights.weights[k];
        let pc = clamp_prob(p_row[k]);
        value -= w * pc.ln();
        let mut g_row = vec![0.0f64; p_row.len()];
        if (PROB_EPS..=1.0 - PROB_EPS).contains(&p_row[k]) {
            g_row[k] = -w / pc / n as f64;
        }
        grad.push(g_row);
    }
    Ok(LossValue {
        value: value / n as f64,
        grad,
        terms: n,
    })
}

/// Composite objective: lambda * L_source + (1 - lambda) * L_category, with
/// both gradient sets scaled accordingly.
#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub value: f64,
    pub grad_source: Vec<Vec<f64>>,
    pub grad_category: Vec<Vec<f64>>,
}

pub fn composite_loss(
    source: &LossValue,
    category: &LossValue,
    lambda: f64,
) -> Result<CompositeLoss, NnError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(NnError::BadLambda(lambda));
    }
    let scale = |grad: &[Vec<f64>], s: f64| {
        grad.iter()
            .map(|row| row.iter().map(|g| g * s).collect())
            .collect()
    };
    Ok(CompositeLoss {
        value: lambda * source.value + (1.0 - lambda) * category.value,
        grad_source: scale(&source.grad, lambda),
        grad_category: scale(&category.grad, 1.0 - lambda),
    })
}

/// Hyperparameters for the adaptive-moment optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update over a parameter tensor.
/// `path` names the tensor in error messages.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut [f32],
    grads: &[f64],
    path: &str,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::ShapeMismatch {
            context: "adam_step",
            expected: state.m.len(),
            got: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFinite(format!("{path}[{i}] gradient")));
    }
    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = (*p as f64 - c.lr * m_hat / (v_hat.sqrt() + c.eps)) as f32;
    }
    Ok(())
}

/// Central-difference gradient check over sampled coordinates of a parameter
/// tensor. `eval` recomputes the loss from the current parameter values.
/// Returns the maximum relative error across the sampled coordinates.
pub fn grad_check<F: FnMut(&[f32]) -> f64>(
    params: &[f32],
    analytic: &[f64],
    mut eval: F,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.len();
    let coords: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        let mut picked: Vec<usize> = (0..max_coords).map(|_| rng.gen_range(0..n)).collect();
        picked.sort_unstable();
        picked.dedup();
        picked
    };
    let mut scratch = params.to_vec();
    let loss_base = eval(&scratch);
    let mut max_rel: f64 = 0.0;
    for &i in &coords {
        let original = scratch[i];
        let plus = (original as f64 + step) as f32;
        let minus = (original as f64 - step) as f32;
        scratch[i] = plus;
        let loss_plus = eval(&scratch);
        scratch[i] = minus;
        let loss_minus = eval(&scratch);
        scratch[i] = original;
        // Use the realized f32 steps so quantization does not bias the quotients.
        let forward = (loss_plus - loss_base) / (plus as f64 - original as f64);
        let backward = (loss_base - loss_minus) / (original as f64 - minus as f64);
        // On a smooth loss the two one-sided quotients agree to O(step); if a
        // relu kink lies anywhere inside the stencil they differ by the slope
        // jump, and no finite-difference quotient reflects the subgradient
        // there. Skip such coordinates instead of reporting noise.
        let spread_scale = forward.abs().max(backward.abs()).max(1e-6);
        if (forward - backward).abs() / spread_scale > 1e-3 {
            continue;
        }
        let numeric = (loss_plus - loss_minus) / (plus as f64 - minus as f64);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
        let rel = (numeric - analytic[i]).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(dim: usize) -> DenseLayer {
        let mut layer = DenseLayer::zeros(dim, dim, Activation::None);
        for i in 0..dim {
            layer.weights[i * dim + i] = 1.0;
        }
        layer
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = identity_layer(3);
        let y = dense_forward(&layer, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut layer = DenseLayer::zeros(2, 2, Activation::None);
        layer.biases = vec![0.3, -0.7];
        let y = dense_forward(&layer, &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.3 as f32 as f64, -0.7 as f32 as f64]);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::init(4, 3, Activation::Relu, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..0.9)).collect();

        // Loss = BCE(sigmoid(layer(x)), target) over a single sample.
        let loss_of = |l: &DenseLayer| {
            let y = dense_forward(l, &x).unwrap();
            let p = sigmoid(&y).unwrap();
            bce_loss(&[p], &[target.clone()]).unwrap().value
        };
        let y = dense_forward(&layer, &x).unwrap();
        let p = sigmoid(&y).unwrap();
        let loss = bce_loss(&[p.clone()], &[target.clone()]).unwrap();
        let dy: Vec<f64> = loss.grad[0]
            .iter()
            .zip(&p)
            .map(|(&dp, &pv)| dp * pv * (1.0 - pv))
            .collect();
        let grads = dense_backward(&layer, &x, &dy).unwrap();

        let mut fragment = layer.clone();
        let max_rel = grad_check(
            &layer.weights,
            &grads.d_weights,
            |w| {
                fragment.weights.copy_from_slice(w);
                loss_of(&fragment)
            },
            1e-4,
            64,
            7,
        );
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(&[0.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn softmax_uniform_over_equal_logits() {
        let p = softmax(&[3.0; 8]).unwrap();
        for v in &p {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_two_logit_values() {
        let p = softmax(&[1.0, 2.0]).unwrap();
        assert!((p[0] - 0.26894).abs() < 1e-5);
        assert!((p[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
        let a = softmax(&z).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let y = vec![vec![1.0, 0.0]];
        let p = vec![vec![1.0, 0.0]];
        let loss = bce_loss(&p, &y).unwrap();
        assert!(loss.value <= -(1.0 - PROB_EPS).ln() + 1e-12);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let p = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let y = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let loss = bce_loss(&p, &y).unwrap();
        assert!((loss.value - (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_sum_form_equals_terms_times_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.gen_range(0.05..0.95)).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| f64::from(rng.gen_bool(0.5))).collect())
            .collect();
        let loss = bce_loss(&p, &y).unwrap();
        // Independent sum-form oracle.
        let mut sum = 0.0;
        for (pr, yr) in p.iter().zip(&y) {
            for (&pv, &yv) in pr.iter().zip(yr) {
                sum -= yv * pv.ln() + (1.0 - yv) * (1.0 - pv).ln();
            }
        }
        assert!((loss.sum_form() - sum).abs() < 1e-10);
        assert_eq!(loss.terms, 10);
    }

    #[test]
    fn class_weights_equal_counts_are_one() {
        let w = class_weights(&[5, 5, 5]).unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn class_weights_hand_case() {
        let w = class_weights(&[10, 30, 60]).unwrap();
        assert!((w.weights[0] - 2.0).abs() < 1e-12);
        assert!((w.weights[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.weights[2] - 1.0 / 3.0).abs() < 1e-12);
        let mean = w.weights.iter().sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_weights_scale_invariant() {
        let a = class_weights(&[7, 21, 14]).unwrap();
        let b = class_weights(&[14, 42, 28]).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn class_weights_zero_count_errors() {
        assert!(matches!(class_weights(&[3, 0, 1]), Err(NnError::ZeroCount(1))));
    }

    #[test]
    fn weighted_ce_reduces_to_plain_ce_with_unit_weights() {
        let q: f64 = 0.37;
        let p = vec![vec![q, 1.0 - q]];
        let y = vec![vec![1.0, 0.0]];
        let loss = weighted_ce(&p, &y, &ClassWeights::uniform(2)).unwrap();
        assert!((loss.value + q.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_is_linear_in_the_weight() {
        let q: f64 = 0.37;
        let p = vec![vec![q, 1.0 - q]];
        let y = vec![vec![1.0, 0.0]];
        let w = ClassWeights {
            weights: vec![2.0, 0.5],
        };
        let loss = weighted_ce(&p, &y, &w).unwrap();
        assert!((loss.value + 2.0 * q.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_batch_matches_per_sample_sum() {
        let p = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
        ];
        let y = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let w = ClassWeights {
            weights: vec![1.5, 0.75, 0.75],
        };
        let loss = weighted_ce(&p, &y, &w).unwrap();
        let expected = (-1.5 * (0.7f64).ln() - 0.75 * (0.8f64).ln() - 0.75 * (0.4f64).ln()) / 3.0;
        assert!((loss.value - expected).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_rejects_non_one_hot() {
        let p = vec![vec![0.5, 0.5]];
        let y = vec![vec![1.0, 1.0]];
        assert!(matches!(
            weighted_ce(&p, &y, &ClassWeights::uniform(2)),
            Err(NnError::NotOneHot(0))
        ));
    }

    #[test]
    fn composite_loss_mixes_by_lambda() {
        let ls = LossValue {
            value: 1.0,
            grad: vec![vec![1.0]],
            terms: 1,
        };
        let lc = LossValue {
            value: 0.5,
            grad: vec![vec![2.0]],
            terms: 1,
        };
        let total = composite_loss(&ls, &lc, 0.2).unwrap();
        assert!((total.value - 0.6).abs() < 1e-12);
        assert!((total.grad_source[0][0] - 0.2).abs() < 1e-12);
        assert!((total.grad_category[0][0] - 1.6).abs() < 1e-12);

        assert_eq!(composite_loss(&ls, &lc, 0.0).unwrap().value, lc.value);
        assert_eq!(composite_loss(&ls, &lc, 1.0).unwrap().value, ls.value);
        assert!(matches!(
            composite_loss(&ls, &lc, 1.5),
            Err(NnError::BadLambda(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = vec![0.5f32, -0.25];
        let mut state = OptimizerState::new(2, AdamConfig::default());
        adam_step(&mut state, &mut params, &[0.0, 0.0], "w").unwrap();
        assert_eq!(params, vec![0.5, -0.25]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        let config = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut params = vec![1.0f32];
        let mut state = OptimizerState::new(1, config);
        adam_step(&mut state, &mut params, &[0.37], "w").unwrap();
        // After bias correction the first update is lr * g / (|g| + eps) ~ lr.
        let delta = (1.0 - params[0]) as f64;
        assert!((delta - 0.01).abs() < 1e-6, "{delta}");
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = vec![1.0f32];
        let mut state = OptimizerState::new(1, config);
        let mut prev = params[0].abs();
        for step in 0..100 {
            let g = 2.0 * params[0] as f64;
            adam_step(&mut state, &mut params, &[g], "w").unwrap();
            // Monotone approach while far from the minimum; near zero the
            // normalized step oscillates within ~lr of the optimum.
            if step < 8 {
                assert!(params[0].abs() <= prev, "step {step}");
            }
            prev = params[0].abs();
        }
        assert!(params[0].abs() < 0.3);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![1.0f32];
        let mut state = OptimizerState::new(1, AdamConfig::default());
        let err = adam_step(&mut state, &mut params, &[f64::NAN], "source.layer0.w").unwrap_err();
        match err {
            NnError::NonFinite(path) => assert!(path.contains("source.layer0.w")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn grad_check_flags_corrupted_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer = DenseLayer::init(3, 2, Activation::None, &mut rng);
        let x: Vec<f64> = vec![0.5, -0.3, 0.8];
        let target = vec![vec![1.0, 0.0]];
        let loss_of = |l: &DenseLayer| {
            let p = sigmoid(&dense_forward(l, &x).unwrap()).unwrap();
            bce_loss(&[p], &target).unwrap().value
        };
        let p = sigmoid(&dense_forward(&layer, &x).unwrap()).unwrap();
        let loss = bce_loss(&[p.clone()], &target).unwrap();
        let dy: Vec<f64> = loss.grad[0]
            .iter()
            .zip(&p)
            .map(|(&dp, &pv)| dp * pv * (1.0 - pv))
            .collect();
        let grads = dense_backward(&layer, &x, &dy).unwrap();
        let corrupted: Vec<f64> = grads.d_weights.iter().map(|g| g * 2.0).collect();
        let mut fragment = layer.clone();
        let err = grad_check(
            &layer.weights,
            &corrupted,
            |w| {
                fragment.weights.copy_from_slice(w);
                loss_of(&fragment)
            },
            1e-4,
            16,
            1,
        );
        assert!(err > 1e-1, "corrupted gradients slipped through: {err}");
    }
}
