//! Core library for dual-head toxic-speech classification over precomputed
//! speech embeddings: dataset curation, feature stores, the dual-head model,
//! three-stage training, and evaluation metrics.

pub mod config;
pub mod curation;
pub mod dualhead;
pub mod features;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod sampler;
pub mod taxonomy;
pub mod trainer;

pub use config::{ConfigError, RunConfig};
pub use curation::{cohens_kappa, consensus_check, kmeans_cluster, AnnotationProposal};
pub use dualhead::{
    forward, init_model, load_checkpoint, predict_labels, save_checkpoint, DualHeadModel,
    HeadKind, Mode,
};
pub use features::{mean_pool, read_store_bytes, write_store_bytes, FeatureStore, PooledFeature};
pub use manifest::{
    derive_stage_dataset, parse_manifest, stratified_split, DatasetSplit, SampleRecord, Stage,
    StageDataset,
};
pub use metrics::{report_to_csv, ConfusionMatrix, MetricsReport};
pub use sampler::{build_index, Batch, ClassIndex};
pub use taxonomy::{Category, CategoryTaxonomy};
pub use trainer::{evaluate, run_full_protocol, run_stage, StagePlan, TrainingLog};
