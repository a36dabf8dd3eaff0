//! Dataset-construction math: two-proposal consensus checking, Cohen's kappa
//! agreement, and k-means clustering of description embeddings.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coarse taxonomy used during the initial annotation pass: the three
/// categories with stable paralinguistic patterns, a catch-all class, and Safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseCategory {
    Sarcasm,
    Horror,
    Sexual,
    ClassD,
    Safe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToxicitySource {
    Textual,
    Paralinguistic,
    Both,
    None,
}

/// One annotator's proposal for a sample: toxicity, coarse category, source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationProposal {
    pub id: String,
    pub toxic: bool,
    pub coarse_category: CoarseCategory,
    pub source: ToxicitySource,
}

impl AnnotationProposal {
    fn aspects(&self) -> (bool, CoarseCategory, ToxicitySource) {
        (self.toxic, self.coarse_category, self.source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusStatus {
    Accepted,
    ReAnnotate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusOutcome {
    pub id: String,
    pub status: ConsensusStatus,
    /// Present only when accepted.
    pub agreed: Option<AnnotationProposal>,
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("proposal ids differ: '{a}' vs '{b}'")]
    IdMismatch { a: String, b: String },
    #[error("non-toxic proposal '{id}' must have coarse_category=Safe and source=None")]
    InvalidProposal { id: String },
    #[error("label lists have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("kappa is undefined: chance agreement is 1 but observed agreement is {observed}")]
    UndefinedKappa { observed: f64 },
    #[error("empty label lists")]
    EmptyLabels,
    #[error("k = {k} exceeds the number of vectors ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("vectors have inconsistent dimensions: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub fn validate_proposal(p: &AnnotationProposal) -> Result<(), CurationError> {
    if !p.toxic && (p.coarse_category != CoarseCategory::Safe || p.source != ToxicitySource::None) {
        return Err(CurationError::InvalidProposal { id: p.id.clone() });
    }
    Ok(())
}

/// Accept when both proposals agree on all three aspects, otherwise route the
/// sample back for re-annotation. Symmetric in its arguments.
pub fn consensus_check(
    a: &AnnotationProposal,
    b: &AnnotationProposal,
) -> Result<ConsensusOutcome, CurationError> {
    if a.id != b.id {
        return Err(CurationError::IdMismatch {
            a: a.id.clone(),
            b: b.id.clone(),
        });
    }
    validate_proposal(a)?;
    validate_proposal(b)?;
    if a.aspects() == b.aspects() {
        Ok(ConsensusOutcome {
            id: a.id.clone(),
            status: ConsensusStatus::Accepted,
            agreed: Some(a.clone()),
        })
    } else {
        Ok(ConsensusOutcome {
            id: a.id.clone(),
            status: ConsensusStatus::ReAnnotate,
            agreed: None,
        })
    }
}

/// Cohen's kappa over two equal-length label sequences:
/// kappa = (p_o - p_e) / (1 - p_e), with chance agreement p_e computed from
/// the marginal label frequencies. Returns exactly 1 when both raters agree
/// everywhere and chance agreement is already 1.
pub fn cohens_kappa<L: Eq + std::hash::Hash + Clone>(
    labels_a: &[L],
    labels_b: &[L],
) -> Result<f64, CurationError> {
    if labels_a.len() != labels_b.len() {
        return Err(CurationError::LengthMismatch {
            a: labels_a.len(),
            b: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(CurationError::EmptyLabels);
    }
    let n = labels_a.len() as f64;
    let observed = labels_a
        .iter()
        .zip(labels_b)
        .filter(|(a, b)| a == b)
        .count() as f64
        / n;

    let mut marg_a: HashMap<&L, f64> = HashMap::new();
    let mut marg_b: HashMap<&L, f64> = HashMap::new();
    for (a, b) in labels_a.iter().zip(labels_b) {
        *marg_a.entry(a).or_default() += 1.0;
        *marg_b.entry(b).or_default() += 1.0;
    }
    let chance: f64 = marg_a
        .iter()
        .map(|(label, ca)| ca / n * marg_b.get(label).copied().unwrap_or(0.0) / n)
        .sum();

    if (1.0 - chance).abs() < 1e-15 {
        if (observed - 1.0).abs() < 1e-15 {
            return Ok(1.0);
        }
        return Err(CurationError::UndefinedKappa { observed });
    }
    Ok((observed - chance) / (1.0 - chance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub id: String,
    pub cluster_index: usize,
    pub centroid_distance: f64,
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<ClusterAssignment>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm with seeded farthest-point initialization over squared
/// Euclidean distance. An empty cluster is re-seeded to the point farthest
/// from its assigned centroid. Deterministic per seed.
pub fn kmeans_cluster(
    ids: &[String],
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansResult, CurationError> {
    let n = vectors.len();
    if k == 0 {
        return Err(CurationError::ZeroClusters);
    }
    if k > n {
        return Err(CurationError::TooManyClusters { k, n });
    }
    let dim = vectors[0].len();
    for v in vectors {
        if v.len() != dim {
            return Err(CurationError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }

    // Farthest-point init: seeded first center, then repeatedly the point
    // farthest from its nearest chosen center.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(vectors[rng.gen_range(0..n)].clone());
    let mut min_dist: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let (far_idx, _) = min_dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| {
                if d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            });
        centroids.push(vectors[far_idx].clone());
        let last = centroids.last().unwrap();
        for (i, v) in vectors.iter().enumerate() {
            let d = sq_dist(v, last);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut iterations = 0;
    for iter in 0..max_iters {
        iterations = iter + 1;
        for (i, v) in vectors.iter().enumerate() {
            assignment[i] = nearest_centroid(v, &centroids).0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, x) in sums[assignment[i]].iter_mut().zip(v) {
                *s += x;
            }
        }

        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed to the point farthest from its assigned centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&vectors[a], &centroids[assignment[a]]);
                        let db = sq_dist(&vectors[b], &centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                shift += sq_dist(&centroids[c], &vectors[far]).sqrt();
                centroids[c] = vectors[far].clone();
                assignment[far] = c;
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift += sq_dist(&centroids[c], &new).sqrt();
            centroids[c] = new;
        }
        if shift < tol {
            break;
        }
    }
    for (i, v) in vectors.iter().enumerate() {
        assignment[i] = nearest_centroid(v, &centroids).0;
    }

    let mut inertia = 0.0;
    let assignments = ids
        .iter()
        .zip(vectors)
        .zip(&assignment)
        .map(|((id, v), &c)| {
            let d = sq_dist(v, &centroids[c]);
            inertia += d;
            ClusterAssignment {
                id: id.clone(),
                cluster_index: c,
                centroid_distance: d.sqrt(),
            }
        })
        .collect();

    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        iterations,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Cluster report rows as CSV: id, cluster_index, distance.
pub fn cluster_report_csv(assignments: &[ClusterAssignment]) -> String {
    let mut out = String::from("id,cluster_index,distance\n");
    for a in assignments {
        out.push_str(&format!("{},{},{:.6}\n", a.id, a.cluster_index, a.centroid_distance));
    }
    out
}
