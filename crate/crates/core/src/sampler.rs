//! Class-balanced batch construction: exactly m samples per present category
//! per batch, batch size B = m * K.

use std::collections::BTreeMap;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifest::{SampleRecord, Stage, StageDataset};
use crate::taxonomy::Category;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("stage {stage} expects category {category} but the dataset has no samples for it")]
    EmptyBucket { stage: &'static str, category: &'static str },
    #[error("sample '{0}' is not present in the manifest")]
    UnknownSample(String),
    #[error("empty dataset")]
    Empty,
    #[error("m must be at least 1")]
    ZeroM,
}

/// Training targets carried with each sampled id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleTarget {
    pub textual: bool,
    pub paralinguistic: bool,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub targets: Vec<SampleTarget>,
}

#[derive(Debug)]
struct Bucket {
    category: Category,
    ids: Vec<String>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl Bucket {
    fn reshuffle(&mut self, seed: u64) {
        let salt = (self.category.index() as u64)
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(self.epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
        self.order = (0..self.ids.len()).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.epoch += 1;
    }
}

/// Per-category id buckets with deterministic per-epoch shuffles.
#[derive(Debug)]
pub struct ClassIndex {
    buckets: Vec<Bucket>,
    targets: HashMap<String, SampleTarget>,
    seed: u64,
}

/// Categories a stage's dataset must cover.
fn expected_categories(stage: Stage) -> &'static [Category] {
    match stage {
        Stage::S1Source => &[
            Category::Sarcasm,
            Category::Horror,
            Category::Sexual,
            Category::Safe,
        ],
        Stage::S2Category | Stage::S3Full => &Category::ALL,
    }
}

/// Bucket the stage dataset by category. Every category the stage expects
/// must be populated.
pub fn build_index(
    dataset: &StageDataset,
    records: &[SampleRecord],
    seed: u64,
) -> Result<ClassIndex, SamplerError> {
    if dataset.sample_ids.is_empty() {
        return Err(SamplerError::Empty);
    }
    let by_id: HashMap<&str, &SampleRecord> =
        records.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let mut grouped: BTreeMap<Category, Vec<String>> = BTreeMap::new();
    let mut targets = HashMap::new();
    for id in &dataset.sample_ids {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| SamplerError::UnknownSample(id.clone()))?;
        grouped.entry(rec.category()).or_default().push(id.clone());
        let (textual, paralinguistic) = rec.source_targets();
        targets.insert(
            id.clone(),
            SampleTarget {
                textual,
                paralinguistic,
                category: rec.category(),
            },
        );
    }
    for &cat in expected_categories(dataset.stage) {
        if !grouped.contains_key(&cat) {
            return Err(SamplerError::EmptyBucket {
                stage: dataset.stage.name(),
                category: cat.name(),
            });
        }
    }
    let mut buckets: Vec<Bucket> = grouped
        .into_iter()
        .map(|(category, ids)| Bucket {
            category,
            ids,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        })
        .collect();
    for b in &mut buckets {
        b.reshuffle(seed);
    }
    Ok(ClassIndex {
        buckets,
        targets,
        seed,
    })
}

/// Two buckets — toxic and safe — for binary-mode training. Targets keep the
/// fine-grained category; only the balancing is coarse.
pub fn build_binary_index(
    dataset: &StageDataset,
    records: &[SampleRecord],
    seed: u64,
) -> Result<ClassIndex, SamplerError> {
    if dataset.sample_ids.is_empty() {
        return Err(SamplerError::Empty);
    }
    let by_id: HashMap<&str, &SampleRecord> =
        records.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let mut toxic = Vec::new();
    let mut safe = Vec::new();
    let mut targets = HashMap::new();
    for id in &dataset.sample_ids {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| SamplerError::UnknownSample(id.clone()))?;
        if rec.is_toxic() {
            toxic.push(id.clone());
        } else {
            safe.push(id.clone());
        }
        let (textual, paralinguistic) = rec.source_targets();
        targets.insert(
            id.clone(),
            SampleTarget {
                textual,
                paralinguistic,
                category: rec.category(),
            },
        );
    }
    for (ids, name) in [(&toxic, "Toxic"), (&safe, "Safe")] {
        if ids.is_empty() {
            return Err(SamplerError::EmptyBucket {
                stage: dataset.stage.name(),
                category: name,
            });
        }
    }
    // Stand-in bucket categories: any toxic member for the merged class.
    let mut buckets = vec![
        Bucket {
            category: Category::ViolenceHarm,
            ids: toxic,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        },
        Bucket {
            category: Category::Safe,
            ids: safe,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        },
    ];
    for b in &mut buckets {
        b.reshuffle(seed);
    }
    Ok(ClassIndex {
        buckets,
        targets,
        seed,
    })
}

impl ClassIndex {
    /// Number of present categories (the stage-local K).
    pub fn class_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.buckets.iter().map(|b| b.category).collect()
    }

    /// Batches per epoch: every majority-class sample is seen once.
    pub fn epoch_batches(&self, m: usize) -> usize {
        let max_bucket = self.buckets.iter().map(|b| b.ids.len()).max().unwrap_or(0);
        max_bucket.div_ceil(m)
    }

    /// Draw exactly m ids per category. Buckets smaller than the remaining
    /// demand wrap with a reshuffle; an id never repeats within a single
    /// batch unless its bucket holds fewer than m ids.
    pub fn next_batch(&mut self, m: usize) -> Result<Batch, SamplerError> {
        if m == 0 {
            return Err(SamplerError::ZeroM);
        }
        let mut ids = Vec::with_capacity(m * self.buckets.len());
        let seed = self.seed;
        for bucket in &mut self.buckets {
            let mut taken: Vec<usize> = Vec::with_capacity(m);
            while taken.len() < m {
                if bucket.cursor >= bucket.order.len() {
                    bucket.reshuffle(seed);
                    // Push ids already drawn this batch behind the positions
                    // we are about to consume, so wrapping cannot duplicate
                    // within the batch when the bucket is large enough.
                    if bucket.ids.len() >= m {
                        let remaining = m - taken.len();
                        for slot in 0..remaining.min(bucket.order.len()) {
                            if taken.contains(&bucket.order[slot]) {
                                if let Some(swap) = (remaining..bucket.order.len())
                                    .find(|&j| !taken.contains(&bucket.order[j]))
                                {
                                    bucket.order.swap(slot, swap);
                                }
                            }
                        }
                    }
                }
                let idx = bucket.order[bucket.cursor];
                bucket.cursor += 1;
                taken.push(idx);
            }
            for idx in taken {
                ids.push(bucket.ids[idx].clone());
            }
        }
        let targets = ids.iter().map(|id| self.targets[id]).collect();
        Ok(Batch { ids, targets })
    }
}
