//! Pooled-feature storage: temporal mean pooling of encoder frame outputs and
//! the TXAF binary feature-store format.
//!
//! TXAF layout (little-endian throughout):
//!
//! | field        | type                        |
//! |--------------|-----------------------------|
//! | magic        | 4 bytes, `TXAF`             |
//! | version      | u16                         |
//! | dim          | u32                         |
//! | count        | u64                         |
//! | extractor    | u32 length + UTF-8 bytes    |
//! | sample_rate  | u32                         |
//! | max_len_s    | u16                         |
//!
//! followed by `count` records, each `u32 length + UTF-8 id` then `dim`
//! IEEE-754 f32 values.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const TXAF_MAGIC: [u8; 4] = *b"TXAF";
pub const TXAF_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected TXAF, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("truncated file while reading {context}")]
    Truncated { context: &'static str },
    #[error("dimension mismatch: store has {expected}, record '{id}' has {got}")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        id: String,
    },
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("non-finite value in '{id}' at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("frame matrix for '{0}' has no frames")]
    EmptyFrames(String),
    #[error("invalid text feature line {line}: {reason}")]
    BadTextLine { line: usize, reason: String },
}

/// Encoder frame outputs for one sample: a T x d matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub sample_id: String,
    /// Row-major frames, each of identical length d.
    pub frames: Vec<Vec<f32>>,
}

/// A fixed-dimension pooled feature vector for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub sample_id: String,
    pub vector: Vec<f32>,
}

/// Provenance metadata carried in the store header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreMeta {
    pub extractor_tag: String,
    pub sample_rate_hz: u32,
    pub max_len_s: u16,
}

impl Default for StoreMeta {
    fn default() -> Self {
        StoreMeta {
            extractor_tag: "wav2vec2-large-960h".to_string(),
            sample_rate_hz: 16_000,
            max_len_s: 25,
        }
    }
}

/// An in-memory feature store: header metadata plus id -> pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub meta: StoreMeta,
    pub dim: usize,
    features: BTreeMap<String, Vec<f32>>,
}

impl FeatureStore {
    pub fn new(dim: usize, meta: StoreMeta) -> Self {
        FeatureStore {
            meta,
            dim,
            features: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.features.get(id).map(|v| v.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.features.keys().map(|s| s.as_str())
    }

    pub fn insert(&mut self, feature: PooledFeature) -> Result<(), FeatureError> {
        if feature.vector.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.dim,
                got: feature.vector.len(),
                id: feature.sample_id,
            });
        }
        if let Some(i) = feature.vector.iter().position(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite {
                id: feature.sample_id,
                index: i,
            });
        }
        if self.features.contains_key(&feature.sample_id) {
            return Err(FeatureError::DuplicateId(feature.sample_id));
        }
        self.features.insert(feature.sample_id, feature.vector);
        Ok(())
    }
}

/// Temporal mean over frames: out_j = (1/T) * sum_t frames[t][j].
/// Accumulates in f64, exact for T = 1.
pub fn mean_pool(frames: &FrameMatrix) -> Result<PooledFeature, FeatureError> {
    if frames.frames.is_empty() {
        return Err(FeatureError::EmptyFrames(frames.sample_id.clone()));
    }
    let dim = frames.frames[0].len();
    let t = frames.frames.len();
    let mut acc = vec![0.0f64; dim];
    for (row_idx, row) in frames.frames.iter().enumerate() {
        if row.len() != dim {
            return Err(FeatureError::DimensionMismatch {
                expected: dim,
                got: row.len(),
                id: frames.sample_id.clone(),
            });
        }
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(FeatureError::NonFinite {
                    id: frames.sample_id.clone(),
                    index: row_idx * dim + j,
                });
            }
            acc[j] += x as f64;
        }
    }
    let vector = if t == 1 {
        frames.frames[0].clone()
    } else {
        acc.iter().map(|&s| (s / t as f64) as f32).collect()
    };
    Ok(PooledFeature {
        sample_id: frames.sample_id.clone(),
        vector,
    })
}

pub fn write_store(store: &FeatureStore, path: &Path) -> Result<(), FeatureError> {
    let mut out = Vec::new();
    write_store_bytes(store, &mut out)?;
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_store_bytes<W: Write>(store: &FeatureStore, out: &mut W) -> Result<(), FeatureError> {
    out.write_all(&TXAF_MAGIC)?;
    out.write_all(&TXAF_VERSION.to_le_bytes())?;
    out.write_all(&(store.dim as u32).to_le_bytes())?;
    out.write_all(&(store.features.len() as u64).to_le_bytes())?;
    let tag = store.meta.extractor_tag.as_bytes();
    out.write_all(&(tag.len() as u32).to_le_bytes())?;
    out.write_all(tag)?;
    out.write_all(&store.meta.sample_rate_hz.to_le_bytes())?;
    out.write_all(&store.meta.max_len_s.to_le_bytes())?;
    for (id, vector) in &store.features {
        let id_bytes = id.as_bytes();
        out.write_all(&(id_bytes.len() as u32).to_le_bytes())?;
        out.write_all(id_bytes)?;
        for x in vector {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_store(path: &Path) -> Result<FeatureStore, FeatureError> {
    let bytes = std::fs::read(path)?;
    read_store_bytes(&bytes)
}

pub fn read_store_bytes(bytes: &[u8]) -> Result<FeatureStore, FeatureError> {
    let mut r = Cursor { bytes, pos: 0 };
    let magic = r.take::<4>("magic")?;
    if magic != TXAF_MAGIC {
        return Err(FeatureError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.take::<2>("version")?);
    if version != TXAF_VERSION {
        return Err(FeatureError::BadVersion(version));
    }
    let dim = u32::from_le_bytes(r.take::<4>("dim")?) as usize;
    let count = u64::from_le_bytes(r.take::<8>("count")?) as usize;
    let tag_len = u32::from_le_bytes(r.take::<4>("extractor tag length")?) as usize;
    let tag = String::from_utf8(r.take_slice(tag_len, "extractor tag")?.to_vec())
        .map_err(|_| FeatureError::Truncated { context: "extractor tag utf-8" })?;
    let sample_rate_hz = u32::from_le_bytes(r.take::<4>("sample rate")?);
    let max_len_s = u16::from_le_bytes(r.take::<2>("max length")?);

    let mut store = FeatureStore::new(
        dim,
        StoreMeta {
            extractor_tag: tag,
            sample_rate_hz,
            max_len_s,
        },
    );
    for _ in 0..count {
        let id_len = u32::from_le_bytes(r.take::<4>("record id length")?) as usize;
        let id = String::from_utf8(r.take_slice(id_len, "record id")?.to_vec())
            .map_err(|_| FeatureError::Truncated { context: "record id utf-8" })?;
        let raw = r.take_slice(dim * 4, "record vector")?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if store.features.contains_key(&id) {
            return Err(FeatureError::DuplicateId(id));
        }
        store.features.insert(id, vector);
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, context: &'static str) -> Result<[u8; N], FeatureError> {
        let slice = self.take_slice(N, context)?;
        let mut out = [0u8; N];
        out.copy_from_slice(slice);
        Ok(out)
    }

    fn take_slice(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], FeatureError> {
        if self.pos + n > self.bytes.len() {
            return Err(FeatureError::Truncated { context });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// Text fixture import: one sample per line, id followed by d decimal floats,
/// whitespace-separated.
pub fn import_text(text: &str, meta: StoreMeta) -> Result<FeatureStore, FeatureError> {
    let mut store: Option<FeatureStore> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| FeatureError::BadTextLine {
                line: lineno + 1,
                reason: "missing id".to_string(),
            })?
            .to_string();
        let vector: Vec<f32> = parts
            .map(|p| {
                p.parse::<f32>().map_err(|e| FeatureError::BadTextLine {
                    line: lineno + 1,
                    reason: format!("bad float '{p}': {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if vector.is_empty() {
            return Err(FeatureError::BadTextLine {
                line: lineno + 1,
                reason: "no values".to_string(),
            });
        }
        let store = store.get_or_insert_with(|| FeatureStore::new(vector.len(), meta.clone()));
        store.insert(PooledFeature {
            sample_id: id,
            vector,
        })?;
    }
    Ok(store.unwrap_or_else(|| FeatureStore::new(0, meta)))
}

/// Id reconciliation between a manifest and a store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub matched: Vec<String>,
    pub missing_in_store: Vec<String>,
    pub missing_in_manifest: Vec<String>,
}

pub fn align(manifest_ids: &[String], store: &FeatureStore) -> Alignment {
    let manifest: HashSet<&str> = manifest_ids.iter().map(|s| s.as_str()).collect();
    let in_store: HashSet<&str> = store.ids().collect();
    let mut matched: Vec<String> = manifest
        .intersection(&in_store)
        .map(|s| s.to_string())
        .collect();
    let mut missing_in_store: Vec<String> = manifest
        .difference(&in_store)
        .map(|s| s.to_string())
        .collect();
    let mut missing_in_manifest: Vec<String> = in_store
        .difference(&manifest)
        .map(|s| s.to_string())
        .collect();
    matched.sort();
    missing_in_store.sort();
    missing_in_manifest.sort();
    Alignment {
        matched,
        missing_in_store,
        missing_in_manifest,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(id: &str, rows: &[&[f32]]) -> FrameMatrix {
        FrameMatrix {
            sample_id: id.to_string(),
            frames: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn mean_pool_two_frames() {
        let pooled = mean_pool(&frames("a", &[&[1.0, 3.0], &[3.0, 5.0]])).unwrap();
        assert_eq!(pooled.vector, vec![2.0, 4.0]);
    }

    #[test]
    fn mean_pool_single_frame_is_identity() {
        let pooled = mean_pool(&frames("a", &[&[7.0, -2.0]])).unwrap();
        assert_eq!(pooled.vector, vec![7.0, -2.0]);
    }

    #[test]
    fn mean_pool_matches_naive_sum_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dim = 16;
        let t = 100;
        let rows: Vec<Vec<f32>> = (0..t)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let fm = FrameMatrix {
            sample_id: "r".to_string(),
            frames: rows.clone(),
        };
        let pooled = mean_pool(&fm).unwrap();
        for j in 0..dim {
            let naive: f64 = rows.iter().map(|r| r[j] as f64).sum::<f64>() / t as f64;
            let rel = ((pooled.vector[j] as f64 - naive) / naive.abs().max(1e-30)).abs();
            assert!(rel < 1e-6, "dim {j}: {rel}");
        }
    }

    #[test]
    fn mean_pool_rejects_non_finite() {
        let err = mean_pool(&frames("a", &[&[1.0, f32::NAN]])).unwrap_err();
        assert!(matches!(err, FeatureError::NonFinite { .. }));
    }

    #[test]
    fn empty_store_round_trips() {
        let store = FeatureStore::new(8, StoreMeta::default());
        let mut bytes = Vec::new();
        write_store_bytes(&store, &mut bytes).unwrap();
        let back = read_store_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn single_vector_round_trips_bitwise() {
        let mut store = FeatureStore::new(2, StoreMeta::default());
        store
            .insert(PooledFeature {
                sample_id: "a".to_string(),
                vector: vec![0.5, -0.25],
            })
            .unwrap();
        let mut bytes = Vec::new();
        write_store_bytes(&store, &mut bytes).unwrap();
        let back = read_store_bytes(&bytes).unwrap();
        assert_eq!(back.get("a"), Some(&[0.5f32, -0.25][..]));
        let mut bytes2 = Vec::new();
        write_store_bytes(&back, &mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn bad_magic_and_truncation_are_detected() {
        let mut store = FeatureStore::new(1, StoreMeta::default());
        store
            .insert(PooledFeature {
                sample_id: "a".to_string(),
                vector: vec![1.0],
            })
            .unwrap();
        let mut bytes = Vec::new();
        write_store_bytes(&store, &mut bytes).unwrap();

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(
            read_store_bytes(&corrupt),
            Err(FeatureError::BadMagic(_))
        ));

        let truncated = &bytes[..bytes.len() - 2];
        assert!(matches!(
            read_store_bytes(truncated),
            Err(FeatureError::Truncated { .. })
        ));
    }

    #[test]
    fn duplicate_insert_is_rejected() {
        let mut store = FeatureStore::new(1, StoreMeta::default());
        let f = PooledFeature {
            sample_id: "a".to_string(),
            vector: vec![1.0],
        };
        store.insert(f.clone()).unwrap();
        assert!(matches!(store.insert(f), Err(FeatureError::DuplicateId(_))));
    }

    #[test]
    fn text_import_round_trips_through_store() {
        let store = import_text("a 0.5 -0.25\nb 1 2\n", StoreMeta::default()).unwrap();
        assert_eq!(store.dim, 2);
        assert_eq!(store.get("b"), Some(&[1.0f32, 2.0][..]));
    }

    #[test]
    fn align_partitions_ids() {
        let mut store = FeatureStore::new(1, StoreMeta::default());
        for id in ["a", "b", "x"] {
            store
                .insert(PooledFeature {
                    sample_id: id.to_string(),
                    vector: vec![0.0],
                })
                .unwrap();
        }
        let manifest: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let alignment = align(&manifest, &store);
        assert_eq!(alignment.matched, vec!["a", "b"]);
        assert_eq!(alignment.missing_in_store, vec!["c", "d", "e"]);
        assert_eq!(alignment.missing_in_manifest, vec!["x"]);
    }
}
