//! Three-stage training orchestration: stage datasets, per-head freezes,
//! stage losses, dev-split selection, and checkpoint emission.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dualhead::{
    checkpoint_bytes, forward, forward_trace, head_backward, init_model, predict_labels,
    predicted_category, DualHeadModel, HeadKind, Mode, ModelError,
};
use crate::features::FeatureStore;
use crate::manifest::{
    derive_stage_dataset, DatasetSplit, ManifestError, SampleRecord, Stage, StageDataset,
};
use crate::metrics::{
    binary_metrics, category_metrics, source_metrics, CategoryMetrics, ConfusionMatrix,
    MetricsError, MetricsReport,
};
use crate::nn::{
    adam_step, bce_loss, class_weights, composite_loss, weighted_ce, AdamConfig, ClassWeights,
    DenseGrad, NnError, OptimizerState,
};
use crate::sampler::{build_index, Batch, SampleTarget, SamplerError};
use crate::taxonomy::Category;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("features missing for {count} samples (first: {first:?})")]
    MissingFeatures { count: usize, first: Vec<String> },
    #[error("stage {stage} requires a source head but the model is in binary mode")]
    BinaryModeSourceStage { stage: &'static str },
    #[error("training diverged at stage {stage} epoch {epoch}: non-finite loss")]
    Diverged { stage: &'static str, epoch: usize },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a single training stage needs.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub stage: Stage,
    pub dataset: StageDataset,
    pub m: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub threshold: f64,
    /// Class-balanced batches when true, plain shuffled batches otherwise.
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub source_hash: String,
    pub category_hash: String,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub stage: String,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_dev_metric: f64,
    pub status: String,
}

impl TrainingLog {
    /// Line-delimited records, one per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch log serialization"));
            out.push('\n');
        }
        out
    }
}

/// Moment accumulators for every tensor of the model, source head first,
/// weights before biases within each layer.
pub struct ModelOptimizer {
    pub states: Vec<OptimizerState>,
}

impl ModelOptimizer {
    pub fn new(model: &DualHeadModel, config: AdamConfig) -> Self {
        let mut states = Vec::new();
        for layer in model.source_head.iter().chain(&model.category_head) {
            states.push(OptimizerState::new(layer.weights.len(), config));
            states.push(OptimizerState::new(layer.biases.len(), config));
        }
        ModelOptimizer { states }
    }
}

struct BatchSource {
    balanced: Option<crate::sampler::ClassIndex>,
    plain: Option<PlainSampler>,
}

/// Shuffled fixed-size batches without class balancing, for ablation runs.
struct PlainSampler {
    ids: Vec<String>,
    targets: HashMap<String, SampleTarget>,
    batch_size: usize,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl PlainSampler {
    fn next_batch(&mut self) -> Batch {
        let mut ids = Vec::with_capacity(self.batch_size);
        while ids.len() < self.batch_size {
            if self.cursor >= self.ids.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(self.epoch));
                self.ids.shuffle(&mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            ids.push(self.ids[self.cursor].clone());
            self.cursor += 1;
        }
        let targets = ids.iter().map(|id| self.targets[id]).collect();
        Batch { ids, targets }
    }
}

fn check_features(
    ids: impl Iterator<Item = impl AsRef<str>>,
    store: &FeatureStore,
) -> Result<(), TrainerError> {
    let missing: Vec<String> = ids
        .filter(|id| store.get(id.as_ref()).is_none())
        .map(|id| id.as_ref().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(TrainerError::MissingFeatures {
            count: missing.len(),
            first: missing.into_iter().take(5).collect(),
        })
    }
}

fn source_target_row(t: &SampleTarget) -> Vec<f64> {
    vec![f64::from(t.textual), f64::from(t.paralinguistic)]
}

fn category_target_row(t: &SampleTarget, mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Full => {
            let mut row = vec![0.0; 8];
            row[t.category.index()] = 1.0;
            row
        }
        Mode::Binary => {
            if t.category.is_toxic() {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        }
    }
}

/// Inverse-frequency weights over the category head's label space, computed
/// from the stage dataset composition.
pub fn stage_class_weights(
    dataset: &StageDataset,
    records: &[SampleRecord],
    mode: Mode,
) -> Result<ClassWeights, NnError> {
    let by_id: HashMap<&str, &SampleRecord> =
        records.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let counts: Vec<usize> = match mode {
        Mode::Full => {
            let mut counts = vec![0usize; 8];
            for id in &dataset.sample_ids {
                if let Some(rec) = by_id.get(id.as_str()) {
                    counts[rec.category().index()] += 1;
                }
            }
            counts
        }
        Mode::Binary => {
            let mut counts = vec![0usize; 2];
            for id in &dataset.sample_ids {
                if let Some(rec) = by_id.get(id.as_str()) {
                    counts[usize::from(!rec.is_toxic())] += 1;
                }
            }
            counts
        }
    };
    if counts.iter().all(|&c| c > 0) {
        return class_weights(&counts);
    }
    // Classes with no samples get weight zero; the inverse-frequency weights
    // of the present classes are computed over the present classes only.
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let present_weights = class_weights(&present)?;
    let mut weights = vec![0.0; counts.len()];
    let mut j = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            weights[i] = present_weights.weights[j];
            j += 1;
        }
    }
    Ok(ClassWeights { weights })
}

/// Which heads a stage updates.
fn trainable_heads(stage: Stage, mode: Mode) -> (bool, bool) {
    match (stage, mode) {
        (_, Mode::Binary) => (false, true),
        (Stage::S1Source, _) => (true, false),
        (Stage::S2Category, _) => (false, true),
        (Stage::S3Full, _) => (true, true),
    }
}

struct BatchOutcome {
    loss: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &mut DualHeadModel,
    optimizer: &mut ModelOptimizer,
    batch: &Batch,
    store: &FeatureStore,
    stage: Stage,
    lambda: f64,
    weights: &ClassWeights,
    train_source: bool,
    train_category: bool,
) -> Result<BatchOutcome, TrainerError> {
    let mut traces = Vec::with_capacity(batch.ids.len());
    for id in &batch.ids {
        let feature = store.get(id).expect("feature presence checked upfront");
        traces.push(forward_trace(model, feature)?);
    }

    let mode = model.mode;
    let (loss, grad_source, grad_category): (f64, Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>) =
        match stage {
            Stage::S1Source => {
                let p: Vec<Vec<f64>> = traces
                    .iter()
                    .map(|t| t.output.source.clone().expect("full mode"))
                    .collect();
                let y: Vec<Vec<f64>> = batch.targets.iter().map(source_target_row).collect();
                let loss = bce_loss(&p, &y)?;
                (loss.value, Some(loss.grad), None)
            }
            Stage::S2Category => {
                let p: Vec<Vec<f64>> = traces.iter().map(|t| t.output.category.clone()).collect();
                let y: Vec<Vec<f64>> = batch
                    .targets
                    .iter()
                    .map(|t| category_target_row(t, mode))
                    .collect();
                let loss = weighted_ce(&p, &y, weights)?;
                (loss.value, None, Some(loss.grad))
            }
            Stage::S3Full => {
                let p_c: Vec<Vec<f64>> = traces.iter().map(|t| t.output.category.clone()).collect();
                let y_c: Vec<Vec<f64>> = batch
                    .targets
                    .iter()
                    .map(|t| category_target_row(t, mode))
                    .collect();
                let l_c = weighted_ce(&p_c, &y_c, weights)?;
                if mode == Mode::Binary {
                    (l_c.value, None, Some(l_c.grad))
                } else {
                    let p_s: Vec<Vec<f64>> = traces
                        .iter()
                        .map(|t| t.output.source.clone().expect("full mode"))
                        .collect();
                    let y_s: Vec<Vec<f64>> = batch.targets.iter().map(source_target_row).collect();
                    let l_s = bce_loss(&p_s, &y_s)?;
                    let total = composite_loss(&l_s, &l_c, lambda)?;
                    (total.value, Some(total.grad_source), Some(total.grad_category))
                }
            }
        };

    if !loss.is_finite() {
        return Err(TrainerError::Diverged {
            stage: stage.name(),
            epoch: 0,
        });
    }

    // Accumulate per-layer gradients over the batch, then update.
    let n_source = model.source_head.len();
    let apply = |model: &mut DualHeadModel,
                 optimizer: &mut ModelOptimizer,
                 kind: HeadKind,
                 grads: Vec<Vec<f64>>|
     -> Result<(), TrainerError> {
        let mut acc: Vec<(Vec<f64>, Vec<f64>)> = model
            .head(kind)
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
            .collect();
        for (trace, d_probs) in traces.iter().zip(&grads) {
            let (acts, probs) = match kind {
                HeadKind::Source => (
                    &trace.source_acts,
                    trace.output.source.as_deref().expect("full mode"),
                ),
                HeadKind::Category => (&trace.category_acts, trace.output.category.as_slice()),
            };
            let layer_grads: Vec<DenseGrad> =
                head_backward(model.head(kind), acts, probs, d_probs, kind)?;
            for (i, g) in layer_grads.into_iter().enumerate() {
                for (a, d) in acc[i].0.iter_mut().zip(&g.d_weights) {
                    *a += d;
                }
                for (a, d) in acc[i].1.iter_mut().zip(&g.d_biases) {
                    *a += d;
                }
            }
        }
        let tensor_base = match kind {
            HeadKind::Source => 0,
            HeadKind::Category => 2 * n_source,
        };
        for (i, (dw, db)) in acc.into_iter().enumerate() {
            let layer = &mut model.head_mut(kind)[i];
            let path_w = format!("{kind:?}.layer{i}.weights");
            let path_b = format!("{kind:?}.layer{i}.biases");
            adam_step(
                &mut optimizer.states[tensor_base + 2 * i],
                &mut layer.weights,
                &dw,
                &path_w,
            )?;
            adam_step(
                &mut optimizer.states[tensor_base + 2 * i + 1],
                &mut layer.biases,
                &db,
                &path_b,
            )?;
        }
        Ok(())
    };

    if let Some(grads) = grad_source {
        if train_source && !model.frozen_source {
            apply(model, optimizer, HeadKind::Source, grads)?;
        }
    }
    if let Some(grads) = grad_category {
        if train_category && !model.frozen_category {
            apply(model, optimizer, HeadKind::Category, grads)?;
        }
    }
    model.step_count += 1;
    Ok(BatchOutcome { loss })
}

/// Forward every sample once and score the predictions.
pub fn evaluate(
    model: &DualHeadModel,
    split_ids: &[String],
    store: &FeatureStore,
    records: &[SampleRecord],
    threshold: f64,
) -> Result<MetricsReport, TrainerError> {
    check_features(split_ids.iter(), store)?;
    let by_id: HashMap<&str, &SampleRecord> =
        records.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let mut ids: Vec<&String> = split_ids.iter().collect();
    ids.sort();

    match model.mode {
        Mode::Full => {
            let mut pred_cat = Vec::new();
            let mut truth_cat = Vec::new();
            let mut pred_src = Vec::new();
            let mut truth_src = Vec::new();
            for id in ids {
                let rec = by_id[id.as_str()];
                let out = forward(model, store.get(id).unwrap())?;
                let pred = predict_labels(&out, threshold);
                pred_cat.push(predicted_category(&pred));
                truth_cat.push(rec.category());
                pred_src.push((pred.textual, pred.paralinguistic));
                truth_src.push(rec.source_targets());
            }
            Ok(MetricsReport {
                sample_count: pred_cat.len(),
                category: category_metrics(&pred_cat, &truth_cat)?,
                binary: binary_metrics(&pred_cat, &truth_cat)?,
                source: Some(source_metrics(&pred_src, &truth_src)?),
            })
        }
        Mode::Binary => {
            let mut pred_idx = Vec::new();
            let mut truth_idx = Vec::new();
            for id in ids {
                let rec = by_id[id.as_str()];
                let out = forward(model, store.get(id).unwrap())?;
                let pred = predict_labels(&out, threshold);
                pred_idx.push(pred.category_index);
                truth_idx.push(usize::from(!rec.is_toxic()));
            }
            let confusion = ConfusionMatrix::from_indices(
                vec!["Toxic".to_string(), "Safe".to_string()],
                &pred_idx,
                &truth_idx,
            )?;
            // Binary metrics reuse the merged-class path via a stand-in
            // toxic category.
            let to_cat = |i: usize| if i == 0 { Category::ViolenceHarm } else { Category::Safe };
            let pred_cat: Vec<Category> = pred_idx.iter().map(|&i| to_cat(i)).collect();
            let truth_cat: Vec<Category> = truth_idx.iter().map(|&i| to_cat(i)).collect();
            Ok(MetricsReport {
                sample_count: pred_idx.len(),
                category: CategoryMetrics {
                    overall_accuracy: confusion.overall_accuracy(),
                    per_category_accuracy: vec![(
                        "Toxic".to_string(),
                        confusion.recall(0),
                    )],
                    macro_f1: confusion.macro_f1(),
                    confusion,
                },
                binary: binary_metrics(&pred_cat, &truth_cat)?,
                source: None,
            })
        }
    }
}

fn dev_metric(report: &MetricsReport, stage: Stage, mode: Mode) -> f64 {
    match (stage, mode) {
        (Stage::S1Source, Mode::Full) => report.source.as_ref().map(|s| s.macro_f1).unwrap_or(0.0),
        _ => report.category.macro_f1,
    }
}

/// Run one training stage: class-balanced epochs, stage loss on the
/// trainable heads, dev validation per epoch, best-checkpoint selection, and
/// early stopping on patience exhaustion.
pub fn run_stage(
    mut model: DualHeadModel,
    plan: &StagePlan,
    store: &FeatureStore,
    records: &[SampleRecord],
    dev_ids: &[String],
) -> Result<(DualHeadModel, TrainingLog), TrainerError> {
    if model.mode == Mode::Binary && plan.stage == Stage::S1Source {
        return Err(TrainerError::BinaryModeSourceStage {
            stage: plan.stage.name(),
        });
    }
    check_features(plan.dataset.sample_ids.iter().chain(dev_ids), store)?;

    let (train_source, train_category) = trainable_heads(plan.stage, model.mode);
    // Stage freezes per the protocol; restored to trainable at stage end.
    model.set_frozen(HeadKind::Source, !train_source);
    model.set_frozen(HeadKind::Category, !train_category);
    model.stage_tag = plan.stage.name().to_string();

    // The balanced sampler already equalizes per-batch class frequency, so
    // inverse-frequency weights on top would double-correct; they apply only
    // to plain batching.
    let weights = match plan.stage {
        Stage::S1Source => ClassWeights::uniform(model.mode.category_dim()),
        _ if plan.balanced => ClassWeights::uniform(model.mode.category_dim()),
        _ => stage_class_weights(&plan.dataset, records, model.mode)?,
    };

    let mut optimizer = ModelOptimizer::new(&model, plan.adam);

    let by_id: HashMap<&str, &SampleRecord> =
        records.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let mut source = if plan.balanced {
        let index = match model.mode {
            Mode::Full => build_index(&plan.dataset, records, plan.seed)?,
            Mode::Binary => crate::sampler::build_binary_index(&plan.dataset, records, plan.seed)?,
        };
        BatchSource {
            balanced: Some(index),
            plain: None,
        }
    } else {
        let targets: HashMap<String, SampleTarget> = plan
            .dataset
            .sample_ids
            .iter()
            .map(|id| {
                let rec = by_id[id.as_str()];
                let (textual, paralinguistic) = rec.source_targets();
                (
                    id.clone(),
                    SampleTarget {
                        textual,
                        paralinguistic,
                        category: rec.category(),
                    },
                )
            })
            .collect();
        let class_count = match model.mode {
            Mode::Binary => 2,
            Mode::Full => {
                let mut cats: Vec<Category> = targets.values().map(|t| t.category).collect();
                cats.sort();
                cats.dedup();
                cats.len()
            }
        };
        BatchSource {
            balanced: None,
            plain: Some(PlainSampler {
                ids: plan.dataset.sample_ids.clone(),
                targets,
                batch_size: plan.m * class_count,
                cursor: usize::MAX,
                epoch: 0,
                seed: plan.seed,
            }),
        }
    };

    let batches_per_epoch = match &source {
        BatchSource {
            balanced: Some(idx),
            ..
        } => idx.epoch_batches(plan.m),
        BatchSource {
            plain: Some(p), ..
        } => plan.dataset.sample_ids.len().div_ceil(p.batch_size),
        _ => unreachable!(),
    }
    .max(1);

    let mut log = TrainingLog {
        stage: plan.stage.name().to_string(),
        epochs: Vec::new(),
        best_epoch: None,
        best_dev_metric: f64::NEG_INFINITY,
        status: "running".to_string(),
    };
    let mut best_model = model.clone();
    let mut epochs_since_best = 0usize;

    for epoch in 0..plan.max_epochs {
        let start = Instant::now();
        let mut epoch_loss = 0.0;
        for _ in 0..batches_per_epoch {
            let batch = match &mut source {
                BatchSource {
                    balanced: Some(idx),
                    ..
                } => idx.next_batch(plan.m)?,
                BatchSource {
                    plain: Some(p), ..
                } => p.next_batch(),
                _ => unreachable!(),
            };
            let outcome = train_batch(
                &mut model,
                &mut optimizer,
                &batch,
                store,
                plan.stage,
                plan.lambda,
                &weights,
                train_source,
                train_category,
            )
            .map_err(|e| match e {
                TrainerError::Diverged { stage, .. } => TrainerError::Diverged { stage, epoch },
                other => other,
            });
            let outcome = match outcome {
                Ok(o) => o,
                Err(TrainerError::Diverged { stage, epoch }) => {
                    // Abort with the last good checkpoint.
                    log.status = format!("diverged at stage {stage} epoch {epoch}");
                    return Ok((best_model, log));
                }
                Err(other) => return Err(other),
            };
            epoch_loss += outcome.loss;
        }
        epoch_loss /= batches_per_epoch as f64;

        let report = evaluate(&model, dev_ids, store, records, plan.threshold)?;
        let metric = dev_metric(&report, plan.stage, model.mode);
        log.epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss,
            dev_metric: metric,
            source_hash: format!("{:016x}", model.head_hash(HeadKind::Source)),
            category_hash: format!("{:016x}", model.head_hash(HeadKind::Category)),
            wall_ms: start.elapsed().as_millis() as u64,
        });

        if metric > log.best_dev_metric {
            log.best_dev_metric = metric;
            log.best_epoch = Some(epoch);
            best_model = model.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= plan.patience {
                log.status = "early-stopped".to_string();
                return Ok((finish(best_model), log));
            }
        }
    }
    log.status = "max-epochs".to_string();
    Ok((finish(best_model), log))
}

fn finish(mut model: DualHeadModel) -> DualHeadModel {
    model.frozen_source = false;
    model.frozen_category = false;
    model
}

/// Run the configured stages in order, threading each stage's best checkpoint
/// into the next. Stage checkpoints and logs land in `config.output_dir`.
pub fn run_full_protocol(
    config: &RunConfig,
    records: &[SampleRecord],
    split: &DatasetSplit,
    store: &FeatureStore,
) -> Result<(DualHeadModel, Vec<TrainingLog>), TrainerError> {
    std::fs::create_dir_all(&config.output_dir)?;
    let mut model = init_model(store.dim, config.hidden, config.seed, config.mode)?;
    let mut logs = Vec::new();
    let stages: Vec<Stage> = if config.mode == Mode::Binary {
        config
            .stages
            .iter()
            .copied()
            .filter(|s| *s != Stage::S1Source)
            .collect()
    } else {
        config.stages.clone()
    };
    for &stage in &stages {
        let dataset = derive_stage_dataset(records, &split.train, stage, config.seed, None)?;
        let plan = StagePlan {
            stage,
            dataset,
            m: config.m,
            max_epochs: config.max_epochs,
            patience: config.patience,
            seed: config.seed,
            lambda: config.lambda,
            adam: AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            threshold: config.threshold,
            balanced: config.balanced_sampler,
        };
        let (next, log) = run_stage(model, &plan, store, records, &split.dev)?;
        model = next;
        let stage_file = config
            .output_dir
            .join(format!("stage_{}.txck", stage.name().to_lowercase()));
        std::fs::write(&stage_file, checkpoint_bytes(&model, None))?;
        std::fs::write(
            config
                .output_dir
                .join(format!("stage_{}.jsonl", stage.name().to_lowercase())),
            log.to_jsonl(),
        )?;
        logs.push(log);
    }
    std::fs::write(
        config.output_dir.join("final.txck"),
        checkpoint_bytes(&model, None),
    )?;
    Ok((model, logs))
}

/// Self-contained finite-difference audit of every head gradient on a seeded
/// random batch. Returns the maximum relative error across all tensors.
pub fn gradient_self_check(dim: usize, seed: u64, mode: Mode) -> Result<f64, TrainerError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772616463686b); // "gradchk"
    let n = 16;
    let inputs: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let targets: Vec<SampleTarget> = (0..n)
        .map(|i| {
            let category = crate::taxonomy::Category::ALL[i % 8];
            let (textual, paralinguistic) = match category {
                Category::Sarcasm => (false, true),
                Category::Horror => (true, true),
                Category::Safe => (false, false),
                _ => (true, false),
            };
            SampleTarget {
                textual,
                paralinguistic,
                category,
            }
        })
        .collect();
    let weights = ClassWeights::uniform(mode.category_dim());

    let batch_loss = |model: &DualHeadModel, stage: Stage| -> f64 {
        let traces: Vec<_> = inputs
            .iter()
            .map(|x| forward_trace(model, x).expect("probe forward"))
            .collect();
        let cat_rows: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| category_target_row(t, model.mode))
            .collect();
        match stage {
            Stage::S1Source => {
                let p: Vec<_> = traces
                    .iter()
                    .map(|t| t.output.source.clone().expect("full mode"))
                    .collect();
                let y: Vec<_> = targets.iter().map(source_target_row).collect();
                bce_loss(&p, &y).expect("probe bce").value
            }
            Stage::S2Category => {
                let p: Vec<_> = traces.iter().map(|t| t.output.category.clone()).collect();
                weighted_ce(&p, &cat_rows, &weights).expect("probe ce").value
            }
            Stage::S3Full => {
                let p_c: Vec<_> = traces.iter().map(|t| t.output.category.clone()).collect();
                let l_c = weighted_ce(&p_c, &cat_rows, &weights).expect("probe ce");
                let p_s: Vec<_> = traces
                    .iter()
                    .map(|t| t.output.source.clone().expect("full mode"))
                    .collect();
                let y_s: Vec<_> = targets.iter().map(source_target_row).collect();
                let l_s = bce_loss(&p_s, &y_s).expect("probe bce");
                composite_loss(&l_s, &l_c, 0.2).expect("probe composite").value
            }
        }
    };

    let analytic = |model: &DualHeadModel, stage: Stage, kind: HeadKind| -> Vec<(Vec<f64>, Vec<f64>)> {
        let traces: Vec<_> = inputs
            .iter()
            .map(|x| forward_trace(model, x).expect("probe forward"))
            .collect();
        let cat_rows: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| category_target_row(t, model.mode))
            .collect();
        let d_probs: Vec<Vec<f64>> = match stage {
            Stage::S1Source => {
                let p: Vec<_> = traces
                    .iter()
                    .map(|t| t.output.source.clone().expect("full mode"))
                    .collect();
                let y: Vec<_> = targets.iter().map(source_target_row).collect();
                bce_loss(&p, &y).expect("probe bce").grad
            }
            Stage::S2Category => {
                let p: Vec<_> = traces.iter().map(|t| t.output.category.clone()).collect();
                weighted_ce(&p, &cat_rows, &weights).expect("probe ce").grad
            }
            Stage::S3Full => {
                let p_c: Vec<_> = traces.iter().map(|t| t.output.category.clone()).collect();
                let l_c = weighted_ce(&p_c, &cat_rows, &weights).expect("probe ce");
                let p_s: Vec<_> = traces
                    .iter()
                    .map(|t| t.output.source.clone().expect("full mode"))
                    .collect();
                let y_s: Vec<_> = targets.iter().map(source_target_row).collect();
                let l_s = bce_loss(&p_s, &y_s).expect("probe bce");
                let comp = composite_loss(&l_s, &l_c, 0.2).expect("probe composite");
                match kind {
                    HeadKind::Source => comp.grad_source,
                    HeadKind::Category => comp.grad_category,
                }
            }
        };
        let mut acc: Vec<(Vec<f64>, Vec<f64>)> = model
            .head(kind)
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
            .collect();
        for (trace, dp) in traces.iter().zip(&d_probs) {
            let (acts, probs) = match kind {
                HeadKind::Source => (
                    &trace.source_acts,
                    trace.output.source.as_deref().expect("full mode"),
                ),
                HeadKind::Category => (&trace.category_acts, trace.output.category.as_slice()),
            };
            let grads =
                head_backward(model.head(kind), acts, probs, dp, kind).expect("probe backward");
            for (i, g) in grads.into_iter().enumerate() {
                for (a, d) in acc[i].0.iter_mut().zip(&g.d_weights) {
                    *a += d;
                }
                for (a, d) in acc[i].1.iter_mut().zip(&g.d_biases) {
                    *a += d;
                }
            }
        }
        acc
    };

    let configs: Vec<(Stage, HeadKind)> = match mode {
        Mode::Full => vec![
            (Stage::S1Source, HeadKind::Source),
            (Stage::S2Category, HeadKind::Category),
            (Stage::S3Full, HeadKind::Source),
            (Stage::S3Full, HeadKind::Category),
        ],
        Mode::Binary => vec![(Stage::S2Category, HeadKind::Category)],
    };

    let model = init_model(dim, [10, 6], seed, mode)?;
    let mut max_err: f64 = 0.0;
    for (stage, kind) in configs {
        let grads = analytic(&model, stage, kind);
        for (layer, (dw, db)) in grads.iter().enumerate() {
            for (is_weights, analytic_grad) in [(true, dw), (false, db)] {
                let params: Vec<f32> = {
                    let l = &model.head(kind)[layer];
                    if is_weights { l.weights.clone() } else { l.biases.clone() }
                };
                let mut probe = model.clone();
                let err = crate::nn::grad_check(
                    &params,
                    analytic_grad,
                    |p: &[f32]| {
                        {
                            let l = &mut probe.head_mut(kind)[layer];
                            if is_weights {
                                l.weights.copy_from_slice(p);
                            } else {
                                l.biases.copy_from_slice(p);
                            }
                        }
                        batch_loss(&probe, stage)
                    },
                    1e-4,
                    40,
                    seed ^ 0xfd,
                );
                max_err = max_err.max(err);
            }
        }
    }
    Ok(max_err)
}

/// Write per-epoch loss-curve rows for plotting.
pub fn loss_curve_csv(logs: &[TrainingLog]) -> String {
    let mut out = String::from("stage,epoch,train_loss,dev_metric\n");
    for log in logs {
        for e in &log.epochs {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                log.stage, e.epoch, e.train_loss, e.dev_metric
            ));
        }
    }
    out
}

pub fn save_checkpoint_to(model: &DualHeadModel, path: &Path) -> Result<(), TrainerError> {
    std::fs::write(path, checkpoint_bytes(model, None))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{PooledFeature, StoreMeta};
    use crate::manifest::{CategoryInfo, Sensitivity, SourceInfo, SourceType};

    fn record(id: &str, category: Category, textual: bool, para: bool) -> SampleRecord {
        let label = match category {
            Category::Sarcasm => "Sarcasm",
            Category::Horror => "Horror",
            Category::Sexual => "Sexual Content",
            Category::MentalRisk => "Drugs",
            Category::Ideology => "Political Sensitivity",
            Category::ViolenceHarm => "Violence",
            Category::Discrimination => "Racial Discrimination",
            Category::Safe => "Safe",
        };
        SampleRecord {
            file_name: id.to_string(),
            source: SourceInfo {
                source_type: SourceType::Synthetic,
                name: "fixture".to_string(),
            },
            sensitivity: Sensitivity {
                overall: textual || para,
                paralinguistic: para,
                textual,
            },
            category: CategoryInfo {
                category,
                label: label.to_string(),
            },
            description: String::new(),
        }
    }

    /// Tiny separable fixture covering all eight categories.
    fn fixture() -> (Vec<SampleRecord>, FeatureStore, Vec<String>, Vec<String>) {
        let dim = 16;
        let mut records = Vec::new();
        let mut store = FeatureStore::new(dim, StoreMeta::default());
        let classes = [
            (Category::Sarcasm, (false, true)),
            (Category::Horror, (true, true)),
            (Category::Sexual, (true, false)),
            (Category::MentalRisk, (true, false)),
            (Category::Ideology, (true, false)),
            (Category::ViolenceHarm, (true, false)),
            (Category::Discrimination, (true, false)),
            (Category::Safe, (false, false)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand::Rng;
        for (ci, (cat, (textual, para))) in classes.iter().enumerate() {
            for i in 0..20 {
                let id = format!("{}_{}", cat.name(), i);
                records.push(record(&id, *cat, *textual, *para));
                let mut v = vec![0.0f32; dim];
                v[2 * ci] = 2.0 + rng.gen_range(-0.2..0.2);
                v[2 * ci + 1] = -1.5 + rng.gen_range(-0.2..0.2);
                store
                    .insert(PooledFeature {
                        sample_id: id,
                        vector: v,
                    })
                    .unwrap();
            }
        }
        let train: Vec<String> = records
            .iter()
            .filter(|r| !r.file_name.ends_with("_0") && !r.file_name.ends_with("_1"))
            .map(|r| r.file_name.clone())
            .collect();
        let dev: Vec<String> = records
            .iter()
            .filter(|r| r.file_name.ends_with("_0") || r.file_name.ends_with("_1"))
            .map(|r| r.file_name.clone())
            .collect();
        (records, store, train, dev)
    }

    fn plan_for(stage: Stage, dataset: StageDataset, lr: f64) -> StagePlan {
        StagePlan {
            stage,
            dataset,
            m: 3,
            max_epochs: 5,
            patience: 5,
            seed: 7,
            lambda: 0.2,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            threshold: 0.5,
            balanced: true,
        }
    }

    #[test]
    fn s1_loss_decreases_on_separable_fixture() {
        let (records, store, train, dev) = fixture();
        let dataset = derive_stage_dataset(&records, &train, Stage::S1Source, 7, None).unwrap();
        let model = init_model(store.dim, [16, 8], 3, Mode::Full).unwrap();
        let plan = plan_for(Stage::S1Source, dataset, 1e-2);
        let (_, log) = run_stage(model, &plan, &store, &records, &dev).unwrap();
        assert!(log.epochs.len() >= 2);
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased: {losses:?}");
        }
    }

    #[test]
    fn s1_freezes_category_and_s2_freezes_source() {
        let (records, store, train, dev) = fixture();
        let model = init_model(store.dim, [16, 8], 3, Mode::Full).unwrap();

        let cat_hash_before = model.head_hash(HeadKind::Category);
        let s1 = derive_stage_dataset(&records, &train, Stage::S1Source, 7, None).unwrap();
        let (model, _) = run_stage(model, &plan_for(Stage::S1Source, s1, 1e-2), &store, &records, &dev)
            .unwrap();
        assert_eq!(model.head_hash(HeadKind::Category), cat_hash_before);

        let src_hash_before = model.head_hash(HeadKind::Source);
        let s2 = derive_stage_dataset(&records, &train, Stage::S2Category, 7, None).unwrap();
        let (model, _) =
            run_stage(model, &plan_for(Stage::S2Category, s2, 1e-2), &store, &records, &dev)
                .unwrap();
        assert_eq!(model.head_hash(HeadKind::Source), src_hash_before);
        assert_ne!(model.head_hash(HeadKind::Category), cat_hash_before);
    }

    #[test]
    fn same_seed_gives_identical_final_hashes() {
        let (records, store, train, dev) = fixture();
        let run = || {
            let model = init_model(store.dim, [16, 8], 3, Mode::Full).unwrap();
            let ds = derive_stage_dataset(&records, &train, Stage::S1Source, 7, None).unwrap();
            let (m, _) =
                run_stage(model, &plan_for(Stage::S1Source, ds, 1e-2), &store, &records, &dev)
                    .unwrap();
            (m.head_hash(HeadKind::Source), m.head_hash(HeadKind::Category))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_features_are_enumerated() {
        let (records, store, mut train, dev) = fixture();
        train.push("ghost".to_string());
        let mut records2 = records.clone();
        records2.push(record("ghost", Category::Safe, false, false));
        let ds = derive_stage_dataset(&records2, &train, Stage::S3Full, 7, None).unwrap();
        let model = init_model(store.dim, [16, 8], 3, Mode::Full).unwrap();
        let err = run_stage(model, &plan_for(Stage::S3Full, ds, 1e-3), &store, &records2, &dev)
            .unwrap_err();
        match err {
            TrainerError::MissingFeatures { count, first } => {
                assert_eq!(count, 1);
                assert_eq!(first, vec!["ghost".to_string()]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn evaluate_is_deterministic() {
        let (records, store, _, dev) = fixture();
        let model = init_model(store.dim, [16, 8], 9, Mode::Full).unwrap();
        let a = evaluate(&model, &dev, &store, &records, 0.5).unwrap();
        let b = evaluate(&model, &dev, &store, &records, 0.5).unwrap();
        assert_eq!(
            crate::metrics::report_to_csv(&a).unwrap(),
            crate::metrics::report_to_csv(&b).unwrap()
        );
    }

    #[test]
    fn binary_mode_skips_source_stage() {
        let (records, store, train, dev) = fixture();
        let model = init_model(store.dim, [16, 8], 3, Mode::Binary).unwrap();
        let ds = derive_stage_dataset(&records, &train, Stage::S1Source, 7, None).unwrap();
        assert!(matches!(
            run_stage(model, &plan_for(Stage::S1Source, ds, 1e-3), &store, &records, &dev),
            Err(TrainerError::BinaryModeSourceStage { .. })
        ));
    }

    #[test]
    fn binary_mode_trains_and_reports_without_source() {
        let (records, store, train, dev) = fixture();
        let model = init_model(store.dim, [16, 8], 3, Mode::Binary).unwrap();
        let ds = derive_stage_dataset(&records, &train, Stage::S3Full, 7, None).unwrap();
        let (model, log) =
            run_stage(model, &plan_for(Stage::S3Full, ds, 1e-2), &store, &records, &dev).unwrap();
        assert!(!log.epochs.is_empty());
        let report = evaluate(&model, &dev, &store, &records, 0.5).unwrap();
        assert!(report.source.is_none());
        assert_eq!(report.category.confusion.labels, vec!["Toxic", "Safe"]);
    }
}
