//! The dual-head model over pooled features: a 2-way multi-label source head
//! and a K-way softmax category head, each three dense layers, with per-head
//! freezing and the TXCK checkpoint format.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{
    dense_backward, dense_forward, sigmoid, softmax, Activation, DenseGrad, DenseLayer, NnError,
    OptimizerState,
};
use crate::taxonomy::Category;

pub const TXCK_MAGIC: [u8; 4] = *b"TXCK";
pub const TXCK_VERSION: u16 = 1;

/// Number of source labels: textual, paralinguistic.
pub const SOURCE_DIM: usize = 2;
/// Categories in full mode: seven toxic plus Safe.
pub const CATEGORY_DIM: usize = 8;
/// Categories in binary mode: toxic, safe.
pub const BINARY_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Source,
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Binary,
}

impl Mode {
    fn tag(self) -> u8 {
        match self {
            Mode::Full => 0,
            Mode::Binary => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Mode> {
        match tag {
            0 => Some(Mode::Full),
            1 => Some(Mode::Binary),
            _ => None,
        }
    }

    pub fn category_dim(self) -> usize {
        match self {
            Mode::Full => CATEGORY_DIM,
            Mode::Binary => BINARY_DIM,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid head dimensions {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("input dimension {got} does not match feature dim {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checkpoint has mode {found:?} but {requested:?} was requested")]
    ModeMismatch { found: Mode, requested: Mode },
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Three dense layers: d -> h1 -> h2 -> out, relu between, linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub output_dim: usize,
}

impl HeadSpec {
    pub fn layer_dims(&self) -> [usize; 4] {
        [self.input_dim, self.hidden[0], self.hidden[1], self.output_dim]
    }

    fn build(&self, rng: &mut ChaCha8Rng) -> Vec<DenseLayer> {
        let dims = self.layer_dims();
        (0..3)
            .map(|i| {
                let act = if i < 2 { Activation::Relu } else { Activation::None };
                DenseLayer::init(dims[i], dims[i + 1], act, rng)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualHeadModel {
    pub feature_dim: usize,
    pub mode: Mode,
    /// Empty in binary mode, where source identification is disabled.
    pub source_head: Vec<DenseLayer>,
    pub category_head: Vec<DenseLayer>,
    pub frozen_source: bool,
    pub frozen_category: bool,
    pub stage_tag: String,
    pub step_count: u64,
    pub seed: u64,
}

/// Model outputs for one pooled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Independent probabilities (textual, paralinguistic); None in binary mode.
    pub source: Option<Vec<f64>>,
    /// Softmax distribution over categories (or toxic/safe in binary mode).
    pub category: Vec<f64>,
}

/// Per-sample intermediate activations, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer inputs per head: activations[0] is the pooled input.
    pub source_acts: Vec<Vec<f64>>,
    pub category_acts: Vec<Vec<f64>>,
    pub output: ModelOutput,
}

/// Deterministic fan-based initialization with zero biases.
pub fn init_model(
    feature_dim: usize,
    hidden: [usize; 2],
    seed: u64,
    mode: Mode,
) -> Result<DualHeadModel, ModelError> {
    if feature_dim == 0 || hidden.contains(&0) {
        return Err(ModelError::InvalidDims(vec![feature_dim, hidden[0], hidden[1]]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_head = match mode {
        Mode::Full => HeadSpec {
            input_dim: feature_dim,
            hidden,
            output_dim: SOURCE_DIM,
        }
        .build(&mut rng),
        Mode::Binary => Vec::new(),
    };
    let category_head = HeadSpec {
        input_dim: feature_dim,
        hidden,
        output_dim: mode.category_dim(),
    }
    .build(&mut rng);
    Ok(DualHeadModel {
        feature_dim,
        mode,
        source_head,
        category_head,
        frozen_source: false,
        frozen_category: false,
        stage_tag: "init".to_string(),
        step_count: 0,
        seed,
    })
}

impl DualHeadModel {
    pub fn head(&self, kind: HeadKind) -> &[DenseLayer] {
        match kind {
            HeadKind::Source => &self.source_head,
            HeadKind::Category => &self.category_head,
        }
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut Vec<DenseLayer> {
        match kind {
            HeadKind::Source => &mut self.source_head,
            HeadKind::Category => &mut self.category_head,
        }
    }

    pub fn set_frozen(&mut self, head: HeadKind, flag: bool) {
        match head {
            HeadKind::Source => self.frozen_source = flag,
            HeadKind::Category => self.frozen_category = flag,
        }
    }

    pub fn is_frozen(&self, head: HeadKind) -> bool {
        match head {
            HeadKind::Source => self.frozen_source,
            HeadKind::Category => self.frozen_category,
        }
    }

    pub fn param_count(&self) -> usize {
        self.source_head
            .iter()
            .chain(&self.category_head)
            .map(|l| l.param_count())
            .sum()
    }

    /// Stable FNV-1a hash of a head's parameter bits; used to verify that
    /// frozen heads never move.
    pub fn head_hash(&self, kind: HeadKind) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for layer in self.head(kind) {
            for w in &layer.weights {
                feed(&w.to_le_bytes());
            }
            for b in &layer.biases {
                feed(&b.to_le_bytes());
            }
        }
        hash
    }
}

fn run_head(head: &[DenseLayer], input: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
    let mut acts = vec![input.to_vec()];
    for layer in head {
        let y = dense_forward(layer, acts.last().unwrap())?;
        acts.push(y);
    }
    Ok(acts)
}

/// Forward pass with cached activations.
pub fn forward_trace(model: &DualHeadModel, pooled: &[f32]) -> Result<ForwardTrace, ModelError> {
    if pooled.len() != model.feature_dim {
        return Err(ModelError::DimensionMismatch {
            expected: model.feature_dim,
            got: pooled.len(),
        });
    }
    let input: Vec<f64> = pooled.iter().map(|&x| x as f64).collect();
    let source_acts = if model.source_head.is_empty() {
        Vec::new()
    } else {
        run_head(&model.source_head, &input)?
    };
    let category_acts = run_head(&model.category_head, &input)?;
    let source = if source_acts.is_empty() {
        None
    } else {
        Some(sigmoid(source_acts.last().unwrap())?)
    };
    let category = softmax(category_acts.last().unwrap())?;
    Ok(ForwardTrace {
        source_acts,
        category_acts,
        output: ModelOutput { source, category },
    })
}

pub fn forward(model: &DualHeadModel, pooled: &[f32]) -> Result<ModelOutput, ModelError> {
    Ok(forward_trace(model, pooled)?.output)
}

/// Backpropagate dL/dp through the output transform and the head's layers.
/// Returns per-layer gradients, outermost layer last.
pub fn head_backward(
    head: &[DenseLayer],
    acts: &[Vec<f64>],
    probs: &[f64],
    d_probs: &[f64],
    kind: HeadKind,
) -> Result<Vec<DenseGrad>, NnError> {
    // Transform Jacobian: sigmoid is elementwise, softmax couples components.
    let d_logits: Vec<f64> = match kind {
        HeadKind::Source => d_probs
            .iter()
            .zip(probs)
            .map(|(&dp, &p)| dp * p * (1.0 - p))
            .collect(),
        HeadKind::Category => {
            let dot: f64 = probs.iter().zip(d_probs).map(|(&p, &dp)| p * dp).sum();
            probs
                .iter()
                .zip(d_probs)
                .map(|(&p, &dp)| p * (dp - dot))
                .collect()
        }
    };
    let mut grads = Vec::with_capacity(head.len());
    let mut upstream = d_logits;
    for (layer, input) in head.iter().zip(acts).rev() {
        let g = dense_backward(layer, input, &upstream)?;
        upstream = g.d_input.clone();
        grads.push(g);
    }
    grads.reverse();
    Ok(grads)
}

/// Threshold the source probabilities and argmax the category distribution.
/// Exact probability ties resolve to the lower class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub textual: bool,
    pub paralinguistic: bool,
    pub category_index: usize,
}

pub fn predict_labels(output: &ModelOutput, threshold: f64) -> Prediction {
    let (textual, paralinguistic) = match &output.source {
        Some(p) => (p[0] >= threshold, p[1] >= threshold),
        None => (false, false),
    };
    let mut best = 0;
    for (i, &p) in output.category.iter().enumerate() {
        if p > output.category[best] {
            best = i;
        }
    }
    Prediction {
        textual,
        paralinguistic,
        category_index: best,
    }
}

/// Category of a full-mode prediction.
pub fn predicted_category(pred: &Prediction) -> Category {
    Category::ALL[pred.category_index]
}

// ---------------------------------------------------------------------------
// TXCK checkpoint format (little-endian):
//   magic "TXCK", version u16, feature_dim u32, mode u8,
//   stage tag (u32 len + UTF-8), step_count u64, seed u64,
//   frozen flags u8 (bit 0 source, bit 1 category),
//   per head: layer count u8, then per layer input u32 / output u32 / act u8,
//   then all parameters f32 (weights then biases, source head first),
//   optimizer flag u8; when 1, per tensor: len u64, step u64,
//   lr/beta1/beta2/eps f64, then m and v as f64 arrays.
// ---------------------------------------------------------------------------

pub fn save_checkpoint(
    model: &DualHeadModel,
    optimizer: Option<&[OptimizerState]>,
    path: &Path,
) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint_bytes(model, optimizer))?;
    Ok(())
}

pub fn checkpoint_bytes(model: &DualHeadModel, optimizer: Option<&[OptimizerState]>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&TXCK_MAGIC);
    out.extend_from_slice(&TXCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.feature_dim as u32).to_le_bytes());
    out.push(model.mode.tag());
    let tag = model.stage_tag.as_bytes();
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag);
    out.extend_from_slice(&model.step_count.to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.push(u8::from(model.frozen_source) | (u8::from(model.frozen_category) << 1));
    for head in [&model.source_head, &model.category_head] {
        out.push(head.len() as u8);
        for layer in head.iter() {
            out.extend_from_slice(&(layer.input_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.output_dim as u32).to_le_bytes());
            out.push(match layer.activation {
                Activation::Relu => 1,
                Activation::None => 0,
            });
        }
    }
    for head in [&model.source_head, &model.category_head] {
        for layer in head.iter() {
            for w in &layer.weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in &layer.biases {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
    }
    match optimizer {
        None => out.push(0),
        Some(states) => {
            out.push(1);
            out.extend_from_slice(&(states.len() as u32).to_le_bytes());
            for s in states {
                out.extend_from_slice(&(s.m.len() as u64).to_le_bytes());
                out.extend_from_slice(&s.step.to_le_bytes());
                for v in [s.config.lr, s.config.beta1, s.config.beta2, s.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in s.m.iter().chain(&s.v) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn load_checkpoint(
    path: &Path,
    expect_dim: Option<usize>,
    expect_mode: Option<Mode>,
) -> Result<(DualHeadModel, Option<Vec<OptimizerState>>), ModelError> {
    let bytes = std::fs::read(path)?;
    checkpoint_from_bytes(&bytes, expect_dim, expect_mode)
}

pub fn checkpoint_from_bytes(
    bytes: &[u8],
    expect_dim: Option<usize>,
    expect_mode: Option<Mode>,
) -> Result<(DualHeadModel, Option<Vec<OptimizerState>>), ModelError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, ctx: &'static str| -> Result<&[u8], ModelError> {
        if *pos + n > bytes.len() {
            return Err(ModelError::Truncated(ctx));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    let magic: [u8; 4] = take(&mut pos, 4, "magic")?.try_into().unwrap();
    if magic != TXCK_MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2, "version")?.try_into().unwrap());
    if version != TXCK_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let feature_dim = u32::from_le_bytes(take(&mut pos, 4, "dim")?.try_into().unwrap()) as usize;
    if let Some(d) = expect_dim {
        if d != feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: feature_dim,
            });
        }
    }
    let mode = Mode::from_tag(take(&mut pos, 1, "mode")?[0]).ok_or(ModelError::Truncated("mode"))?;
    if let Some(m) = expect_mode {
        if m != mode {
            return Err(ModelError::ModeMismatch {
                found: mode,
                requested: m,
            });
        }
    }
    let tag_len = u32::from_le_bytes(take(&mut pos, 4, "tag length")?.try_into().unwrap()) as usize;
    let stage_tag = String::from_utf8(take(&mut pos, tag_len, "tag")?.to_vec())
        .map_err(|_| ModelError::Truncated("tag utf-8"))?;
    let step_count = u64::from_le_bytes(take(&mut pos, 8, "step count")?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(&mut pos, 8, "seed")?.try_into().unwrap());
    let frozen = take(&mut pos, 1, "frozen flags")?[0];

    let mut heads: [Vec<DenseLayer>; 2] = [Vec::new(), Vec::new()];
    for head in heads.iter_mut() {
        let n_layers = take(&mut pos, 1, "layer count")?[0] as usize;
        for _ in 0..n_layers {
            let input_dim =
                u32::from_le_bytes(take(&mut pos, 4, "layer input dim")?.try_into().unwrap()) as usize;
            let output_dim =
                u32::from_le_bytes(take(&mut pos, 4, "layer output dim")?.try_into().unwrap()) as usize;
            let act = match take(&mut pos, 1, "layer activation")?[0] {
                1 => Activation::Relu,
                _ => Activation::None,
            };
            head.push(DenseLayer::zeros(input_dim, output_dim, act));
        }
    }
    for head in heads.iter_mut() {
        for layer in head.iter_mut() {
            for w in layer.weights.iter_mut() {
                *w = f32::from_le_bytes(take(&mut pos, 4, "weight")?.try_into().unwrap());
            }
            for b in layer.biases.iter_mut() {
                *b = f32::from_le_bytes(take(&mut pos, 4, "bias")?.try_into().unwrap());
            }
        }
    }
    let [source_head, category_head] = heads;

    let optimizer = match take(&mut pos, 1, "optimizer flag")?[0] {
        0 => None,
        _ => {
            let count =
                u32::from_le_bytes(take(&mut pos, 4, "optimizer tensor count")?.try_into().unwrap());
            let mut states = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let len =
                    u64::from_le_bytes(take(&mut pos, 8, "moment length")?.try_into().unwrap()) as usize;
                let step = u64::from_le_bytes(take(&mut pos, 8, "optimizer step")?.try_into().unwrap());
                let mut hp = [0.0f64; 4];
                for v in hp.iter_mut() {
                    *v = f64::from_le_bytes(take(&mut pos, 8, "hyperparameter")?.try_into().unwrap());
                }
                let mut read_vec = |ctx: &'static str| -> Result<Vec<f64>, ModelError> {
                    let mut out = Vec::with_capacity(len);
                    for _ in 0..len {
                        out.push(f64::from_le_bytes(take(&mut pos, 8, ctx)?.try_into().unwrap()));
                    }
                    Ok(out)
                };
                let m = read_vec("first moment")?;
                let v = read_vec("second moment")?;
                states.push(OptimizerState {
                    config: crate::nn::AdamConfig {
                        lr: hp[0],
                        beta1: hp[1],
                        beta2: hp[2],
                        eps: hp[3],
                    },
                    m,
                    v,
                    step,
                });
            }
            Some(states)
        }
    };

    Ok((
        DualHeadModel {
            feature_dim,
            mode,
            source_head,
            category_head,
            frozen_source: frozen & 1 != 0,
            frozen_category: frozen & 2 != 0,
            stage_tag,
            step_count,
            seed,
        },
        optimizer,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_model(16, [8, 4], 42, Mode::Full).unwrap();
        let b = init_model(16, [8, 4], 42, Mode::Full).unwrap();
        let c = init_model(16, [8, 4], 43, Mode::Full).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        let m = init_model(1024, [512, 256], 0, Mode::Full).unwrap();
        let per_head = |out: usize| 1024 * 512 + 512 + 512 * 256 + 256 + 256 * out + out;
        assert_eq!(m.param_count(), per_head(2) + per_head(8));
    }

    #[test]
    fn zero_output_layers_give_uniform_outputs() {
        let mut m = init_model(8, [4, 4], 1, Mode::Full).unwrap();
        for head in [&mut m.source_head, &mut m.category_head] {
            let last = head.last_mut().unwrap();
            last.weights.iter_mut().for_each(|w| *w = 0.0);
            last.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        let out = forward(&m, &[0.5; 8]).unwrap();
        assert_eq!(out.source.unwrap(), vec![0.5, 0.5]);
        for p in &out.category {
            assert!((p - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn category_distribution_sums_to_one() {
        let m = init_model(8, [6, 5], 3, Mode::Full).unwrap();
        let out = forward(&m, &[0.1, -0.4, 2.0, 0.0, 1.5, -2.0, 0.3, 0.9]).unwrap();
        assert!((out.category.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_mode_has_no_source_head() {
        let m = init_model(8, [4, 4], 1, Mode::Binary).unwrap();
        assert!(m.source_head.is_empty());
        assert_eq!(m.category_head.last().unwrap().output_dim, 2);
        let out = forward(&m, &[0.0; 8]).unwrap();
        assert!(out.source.is_none());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = init_model(8, [4, 4], 1, Mode::Full).unwrap();
        assert!(matches!(
            forward(&m, &[0.0; 7]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let m = init_model(12, [6, 5], 99, Mode::Full).unwrap();
        let input: Vec<f32> = (0..12).map(|i| (i as f32) / 7.0 - 0.5).collect();
        let before = forward(&m, &input).unwrap();
        let bytes = checkpoint_bytes(&m, None);
        let (loaded, opt) = checkpoint_from_bytes(&bytes, Some(12), Some(Mode::Full)).unwrap();
        assert!(opt.is_none());
        assert_eq!(loaded, m);
        let after = forward(&loaded, &input).unwrap();
        assert_eq!(before, after);
        assert_eq!(checkpoint_bytes(&loaded, None), bytes);
    }

    #[test]
    fn checkpoint_with_optimizer_round_trips() {
        let m = init_model(4, [3, 3], 7, Mode::Full).unwrap();
        let states = vec![OptimizerState::new(10, Default::default())];
        let bytes = checkpoint_bytes(&m, Some(&states));
        let (_, opt) = checkpoint_from_bytes(&bytes, None, None).unwrap();
        assert_eq!(opt.unwrap(), states);
    }

    #[test]
    fn checkpoint_dim_and_mode_mismatches_error() {
        let m = init_model(4, [3, 3], 7, Mode::Binary).unwrap();
        let bytes = checkpoint_bytes(&m, None);
        assert!(matches!(
            checkpoint_from_bytes(&bytes, Some(5), None),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            checkpoint_from_bytes(&bytes, None, Some(Mode::Full)),
            Err(ModelError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_checkpoint_header_errors() {
        let m = init_model(4, [3, 3], 7, Mode::Full).unwrap();
        let mut bytes = checkpoint_bytes(&m, None);
        bytes[0] = b'Z';
        assert!(matches!(
            checkpoint_from_bytes(&bytes, None, None),
            Err(ModelError::BadMagic(_))
        ));
        let good = checkpoint_bytes(&m, None);
        assert!(matches!(
            checkpoint_from_bytes(&good[..good.len() - 3], None, None),
            Err(ModelError::Truncated(_))
        ));
    }

    #[test]
    fn predict_labels_thresholds_and_tie_breaks() {
        let out = ModelOutput {
            source: Some(vec![0.9, 0.2]),
            category: vec![0.25, 0.25, 0.2, 0.1, 0.05, 0.05, 0.05, 0.05],
        };
        let pred = predict_labels(&out, 0.5);
        assert!(pred.textual);
        assert!(!pred.paralinguistic);
        // Exact tie between index 0 and 1 resolves low.
        assert_eq!(pred.category_index, 0);
    }

    #[test]
    fn safe_argmax_maps_to_safe_category() {
        let mut category = vec![0.0; 8];
        category[7] = 1.0;
        let pred = predict_labels(
            &ModelOutput {
                source: Some(vec![0.1, 0.1]),
                category,
            },
            0.5,
        );
        assert_eq!(predicted_category(&pred), Category::Safe);
    }

    #[test]
    fn argmax_invariant_to_logit_shift() {
        let m = init_model(6, [5, 4], 5, Mode::Full).unwrap();
        let input = [0.3f32, -0.2, 0.9, 0.0, -1.1, 0.4];
        let trace = forward_trace(&m, &input).unwrap();
        let logits = trace.category_acts.last().unwrap();
        let shifted: Vec<f64> = logits.iter().map(|z| z + 57.0).collect();
        let p1 = softmax(logits).unwrap();
        let p2 = softmax(&shifted).unwrap();
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&p1), argmax(&p2));
    }
}
