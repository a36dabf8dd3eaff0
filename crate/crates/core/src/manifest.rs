//! Dataset manifest parsing, validation, stratified splitting, and stage
//! dataset derivation.
//!
//! Manifest files are UTF-8 JSON arrays of records:
//!
//! ```json
//! [
//!   {
//!     "file_name": "librispeech_00017.wav",
//!     "source": { "type": "real", "name": "LibriSpeech_train" },
//!     "sensitivity": { "overall": true, "paralinguistic": false, "textual": true },
//!     "category": { "category": "Discrimination", "label": "Racial Discrimination" },
//!     "description": "Racial Discrimination, Slavery"
//!   }
//! ]
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Category, CategoryTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceType {
    #[serde(rename = "real")]
    Real,
    #[serde(rename = "synthetic")]
    Synthetic,
}

/// One annotated audio sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub file_name: String,
    pub source: SourceInfo,
    pub sensitivity: Sensitivity,
    pub category: CategoryInfo,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceInfo {
    #[serde(rename = "type")]
    pub source_type: SourceType,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensitivity {
    pub overall: bool,
    pub paralinguistic: bool,
    pub textual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryInfo {
    pub category: Category,
    pub label: String,
}

impl SampleRecord {
    pub fn category(&self) -> Category {
        self.category.category
    }

    pub fn is_toxic(&self) -> bool {
        self.category().is_toxic()
    }

    /// Source-identification targets: (textual, paralinguistic).
    /// Safe samples carry (false, false).
    pub fn source_targets(&self) -> (bool, bool) {
        (self.sensitivity.textual, self.sensitivity.paralinguistic)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record '{id}' violates invariant: {rule}")]
    Validation { id: String, rule: String },
    #[error("duplicate file_name '{id}'")]
    Duplicate { id: String },
    #[error("empty manifest")]
    Empty,
    #[error("category {category} has only {available} Safe samples, need {needed} (shortfall {shortfall})")]
    SafeShortfall {
        category: String,
        available: usize,
        needed: usize,
        shortfall: usize,
    },
    #[error("split ratios {0:?} do not sum to 1")]
    BadRatios([f64; 3]),
}

/// Parse and validate a manifest document.
///
/// Order is preserved; every record is checked against the schema invariants
/// and ids must be unique.
pub fn parse_manifest(bytes: &[u8], taxonomy: &CategoryTaxonomy) -> Result<Vec<SampleRecord>, ManifestError> {
    let records: Vec<SampleRecord> = serde_json::from_slice(bytes).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        ManifestError::Parse {
            offset: byte_offset(bytes, line, column),
            line,
            column,
            message: e.to_string(),
        }
    })?;
    let mut seen = HashSet::new();
    for rec in &records {
        validate_record(rec, taxonomy)?;
        if !seen.insert(rec.file_name.as_str()) {
            return Err(ManifestError::Duplicate {
                id: rec.file_name.clone(),
            });
        }
    }
    Ok(records)
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    let mut current_line = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if current_line == line {
            offset = i;
            break;
        }
        if b == b'\n' {
            current_line += 1;
            offset = i + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

pub fn validate_record(rec: &SampleRecord, taxonomy: &CategoryTaxonomy) -> Result<(), ManifestError> {
    let fail = |rule: &str| {
        Err(ManifestError::Validation {
            id: rec.file_name.clone(),
            rule: rule.to_string(),
        })
    };
    let s = rec.sensitivity;
    if s.overall != (s.paralinguistic || s.textual) {
        return fail("sensitivity.overall must equal paralinguistic OR textual");
    }
    let cat = rec.category();
    if (cat == Category::Safe) != !s.overall {
        return fail("category is Safe iff sensitivity.overall is false");
    }
    if (rec.category.label == "Safe") != (cat == Category::Safe) {
        return fail("label is Safe iff category is Safe");
    }
    match taxonomy.category_of(&rec.category.label) {
        None => return fail("unknown fine-grained label"),
        Some(owner) if owner != cat => {
            return fail("fine-grained label does not belong to the record's category")
        }
        Some(_) => {}
    }
    Ok(())
}

/// Serialize records back to the manifest format (pretty JSON, stable field
/// order).
pub fn serialize_manifest(records: &[SampleRecord]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(records).expect("manifest serialization");
    out.push(b'\n');
    out
}

/// A stratified train/dev/test partition of sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    /// Categories that had fewer than 3 samples and went entirely to train.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("split serialization");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Stratified split by category. Per category, the dev and test counts are
/// the rounded ratio shares and train takes the remainder, so every
/// per-category count lands within one sample of the exact ratio.
/// Deterministic for a fixed seed.
pub fn stratified_split(
    records: &[SampleRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, ManifestError> {
    if records.is_empty() {
        return Err(ManifestError::Empty);
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ManifestError::BadRatios([ratios.0, ratios.1, ratios.2]));
    }

    let mut buckets: BTreeMap<Category, Vec<&str>> = BTreeMap::new();
    for rec in records {
        buckets
            .entry(rec.category())
            .or_default()
            .push(&rec.file_name);
    }

    let mut split = DatasetSplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        ratios,
        seed,
        warnings: Vec::new(),
    };

    for (category, mut ids) in buckets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (category.index() as u64).wrapping_mul(0x9e3779b97f4a7c15));
        ids.shuffle(&mut rng);
        if ids.len() < 3 {
            split
                .warnings
                .push(format!("category {} has fewer than 3 samples; all assigned to train", category.name()));
            split.train.extend(ids.iter().map(|s| s.to_string()));
            continue;
        }
        let n = ids.len();
        let n_dev = (n as f64 * ratios.1).round() as usize;
        let n_test = (n as f64 * ratios.2).round() as usize;
        let n_train = n - n_dev - n_test;
        split.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        split
            .dev
            .extend(ids[n_train..n_train + n_dev].iter().map(|s| s.to_string()));
        split
            .test
            .extend(ids[n_train + n_dev..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}

/// Which training stage a derived dataset feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Source-head training over C1-C3 toxic samples plus a Safe supplement.
    S1Source,
    /// Category-head training over all toxic samples plus a Safe supplement.
    S2Category,
    /// Joint fine-tuning over the full training split.
    S3Full,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::S1Source => "S1",
            Stage::S2Category => "S2",
            Stage::S3Full => "S3",
        }
    }
}

/// Per-category and per-source counts of a derived stage dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationReport {
    pub per_category: BTreeMap<String, usize>,
    pub toxic: usize,
    pub safe: usize,
    pub real: usize,
    pub synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDataset {
    pub stage: Stage,
    pub sample_ids: Vec<String>,
    pub report: DerivationReport,
}

/// Derive the stage training subset from the train split.
///
/// S1: all C1-C3 toxic train samples plus round(toxic/3) Safe samples drawn
/// deterministically by seed. S2: all toxic train samples plus round(toxic/7)
/// Safe samples. S3: the full training split. `safe_fraction_override`
/// replaces the stage's default Safe fraction when given.
pub fn derive_stage_dataset(
    records: &[SampleRecord],
    train_ids: &[String],
    stage: Stage,
    seed: u64,
    safe_fraction_override: Option<f64>,
) -> Result<StageDataset, ManifestError> {
    if train_ids.is_empty() {
        return Err(ManifestError::Empty);
    }
    let by_id: HashMap<&str, &SampleRecord> =
        records.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let train: Vec<&SampleRecord> = train_ids
        .iter()
        .filter_map(|id| by_id.get(id.as_str()).copied())
        .collect();

    let sample_ids: Vec<String> = match stage {
        Stage::S3Full => train_ids.to_vec(),
        Stage::S1Source | Stage::S2Category => {
            let toxic: Vec<&SampleRecord> = train
                .iter()
                .copied()
                .filter(|r| {
                    r.is_toxic()
                        && (stage == Stage::S2Category
                            || matches!(
                                r.category(),
                                Category::Sarcasm | Category::Horror | Category::Sexual
                            ))
                })
                .collect();
            let default_fraction = match stage {
                Stage::S1Source => 1.0 / 3.0,
                Stage::S2Category => 1.0 / 7.0,
                Stage::S3Full => unreachable!(),
            };
            let fraction = safe_fraction_override.unwrap_or(default_fraction);
            let needed = (toxic.len() as f64 * fraction).round() as usize;
            let mut safe_ids: Vec<&str> = train
                .iter()
                .filter(|r| !r.is_toxic())
                .map(|r| r.file_name.as_str())
                .collect();
            if safe_ids.len() < needed {
                return Err(ManifestError::SafeShortfall {
                    category: "Safe".to_string(),
                    available: safe_ids.len(),
                    needed,
                    shortfall: needed - safe_ids.len(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage_salt(stage));
            safe_ids.shuffle(&mut rng);
            toxic
                .iter()
                .map(|r| r.file_name.clone())
                .chain(safe_ids[..needed].iter().map(|s| s.to_string()))
                .collect()
        }
    };

    let mut report = DerivationReport::default();
    for id in &sample_ids {
        if let Some(rec) = by_id.get(id.as_str()) {
            *report
                .per_category
                .entry(rec.category().name().to_string())
                .or_default() += 1;
            if rec.is_toxic() {
                report.toxic += 1;
            } else {
                report.safe += 1;
            }
            match rec.source.source_type {
                SourceType::Real => report.real += 1,
                SourceType::Synthetic => report.synthetic += 1,
            }
        }
    }

    Ok(StageDataset {
        stage,
        sample_ids,
        report,
    })
}

fn stage_salt(stage: Stage) -> u64 {
    match stage {
        Stage::S1Source => 0x5331,
        Stage::S2Category => 0x5332,
        Stage::S3Full => 0x5333,
    }
}

/// Collapse category labels to a binary toxic flag per sample.
pub fn to_binary_labels(records: &[SampleRecord]) -> Vec<(String, bool)> {
    records
        .iter()
        .map(|r| (r.file_name.clone(), r.is_toxic()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, category: Category, label: &str, textual: bool, para: bool) -> SampleRecord {
        SampleRecord {
            file_name: id.to_string(),
            source: SourceInfo {
                source_type: SourceType::Real,
                name: "LibriSpeech_train".to_string(),
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

    pub(crate) fn safe_record(id: &str) -> SampleRecord {
        record(id, Category::Safe, "Safe", false, false)
    }

    #[test]
    fn parses_appendix_style_record() {
        let doc = br#"[
          {
            "file_name": "libri_00017.wav",
            "source": { "type": "real", "name": "LibriSpeech_train" },
            "sensitivity": { "overall": true, "paralinguistic": false, "textual": true },
            "category": { "category": "Discrimination", "label": "Racial Discrimination" },
            "description": "Racial Discrimination, Slavery"
          }
        ]"#;
        let recs = parse_manifest(doc, &CategoryTaxonomy::new()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].category(), Category::Discrimination);
        assert!(recs[0].sensitivity.textual);
        assert!(!recs[0].sensitivity.paralinguistic);
    }

    #[test]
    fn safe_with_overall_true_is_invalid() {
        let mut rec = safe_record("a");
        rec.sensitivity.overall = true;
        rec.sensitivity.textual = true;
        let err = validate_record(&rec, &CategoryTaxonomy::new()).unwrap_err();
        assert!(matches!(err, ManifestError::Validation { .. }));
    }

    #[test]
    fn duplicate_id_is_rejected_with_name() {
        let recs = vec![safe_record("a"), safe_record("b"), safe_record("a")];
        let doc = serialize_manifest(&recs);
        let err = parse_manifest(&doc, &CategoryTaxonomy::new()).unwrap_err();
        match err {
            ManifestError::Duplicate { id } => assert_eq!(id, "a"),
            other => panic!("expected duplicate error, got {other}"),
        }
    }

    #[test]
    fn malformed_document_reports_offset() {
        let doc = b"[ { \"file_name\": }";
        let err = parse_manifest(doc, &CategoryTaxonomy::new()).unwrap_err();
        match err {
            ManifestError::Parse { offset, .. } => assert!(offset > 0 && offset <= doc.len()),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn label_must_match_category() {
        let rec = record("x", Category::Horror, "Racial Discrimination", true, false);
        let err = validate_record(&rec, &CategoryTaxonomy::new()).unwrap_err();
        assert!(matches!(err, ManifestError::Validation { .. }));
    }

    #[test]
    fn split_of_ten_safe_records_is_7_1_2() {
        let recs: Vec<_> = (0..10).map(|i| safe_record(&format!("s{i}"))).collect();
        let split = stratified_split(&recs, (0.7, 0.1, 0.2), 7).unwrap();
        assert_eq!(split.train.len(), 7);
        assert_eq!(split.dev.len(), 1);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn split_is_stratified_within_one_sample() {
        let mut recs: Vec<_> = (0..50)
            .map(|i| record(&format!("c{i}"), Category::Sarcasm, "Sarcasm", true, false))
            .collect();
        recs.extend((0..50).map(|i| safe_record(&format!("s{i}"))));
        let split = stratified_split(&recs, (0.7, 0.1, 0.2), 3).unwrap();
        let train_sarcasm = split.train.iter().filter(|id| id.starts_with('c')).count();
        assert!((34..=36).contains(&train_sarcasm), "{train_sarcasm}");
        assert_eq!(split.train.len() + split.dev.len() + split.test.len(), 100);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let recs: Vec<_> = (0..30).map(|i| safe_record(&format!("s{i}"))).collect();
        let a = stratified_split(&recs, (0.7, 0.1, 0.2), 11).unwrap();
        let b = stratified_split(&recs, (0.7, 0.1, 0.2), 11).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let all: HashSet<_> = a.train.iter().chain(&a.dev).chain(&a.test).collect();
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn tiny_category_goes_to_train_with_warning() {
        let mut recs: Vec<_> = (0..10).map(|i| safe_record(&format!("s{i}"))).collect();
        recs.push(record("h0", Category::Horror, "Horror", false, true));
        recs.push(record("h1", Category::Horror, "Horror", false, true));
        let split = stratified_split(&recs, (0.7, 0.1, 0.2), 1).unwrap();
        assert!(!split.warnings.is_empty());
        assert!(split.train.contains(&"h0".to_string()));
        assert!(split.train.contains(&"h1".to_string()));
    }

    #[test]
    fn stage_s3_is_identity() {
        let recs: Vec<_> = (0..10).map(|i| safe_record(&format!("s{i}"))).collect();
        let ids: Vec<String> = recs.iter().map(|r| r.file_name.clone()).collect();
        let ds = derive_stage_dataset(&recs, &ids, Stage::S3Full, 0, None).unwrap();
        assert_eq!(ds.sample_ids, ids);
    }

    #[test]
    fn stage_s1_excludes_c4_to_c7_toxic() {
        let mut recs = vec![
            record("c1", Category::Sarcasm, "Sarcasm", false, true),
            record("c6", Category::ViolenceHarm, "Violence", true, false),
        ];
        recs.extend((0..5).map(|i| safe_record(&format!("s{i}"))));
        let ids: Vec<String> = recs.iter().map(|r| r.file_name.clone()).collect();
        let ds = derive_stage_dataset(&recs, &ids, Stage::S1Source, 0, None).unwrap();
        assert!(ds.sample_ids.contains(&"c1".to_string()));
        assert!(!ds.sample_ids.contains(&"c6".to_string()));
        assert_eq!(ds.report.toxic, 1);
    }

    #[test]
    fn safe_shortfall_is_reported() {
        let recs = vec![
            record("c1", Category::Sarcasm, "Sarcasm", false, true),
            record("c2", Category::Horror, "Horror", false, true),
            record("c3", Category::Sexual, "Sexual Content", true, true),
        ];
        let ids: Vec<String> = recs.iter().map(|r| r.file_name.clone()).collect();
        let err = derive_stage_dataset(&recs, &ids, Stage::S1Source, 0, None).unwrap_err();
        match err {
            ManifestError::SafeShortfall { shortfall, .. } => assert_eq!(shortfall, 1),
            other => panic!("expected shortfall, got {other}"),
        }
    }

    #[test]
    fn binary_labels_follow_category() {
        let recs = vec![
            record("v", Category::ViolenceHarm, "Violence", true, false),
            safe_record("s"),
        ];
        let labels = to_binary_labels(&recs);
        assert_eq!(labels, vec![("v".to_string(), true), ("s".to_string(), false)]);
    }
}
