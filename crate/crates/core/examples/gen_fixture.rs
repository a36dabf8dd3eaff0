//! Generates the committed end-to-end fixture: a 400-sample manifest and
//! matching 32-dim feature store drawn from 8 Gaussian clusters, then runs
//! the full protocol plus the three ablations and prints their scores.
//!
//! Usage: gen_fixture <output-dir> [--check-only]

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use paratox_core::config::RunConfig;
use paratox_core::dualhead::Mode;
use paratox_core::features::{write_store_bytes, FeatureStore, PooledFeature, StoreMeta};
use paratox_core::manifest::{
    serialize_manifest, stratified_split, CategoryInfo, SampleRecord, Sensitivity, SourceInfo,
    SourceType, Stage,
};
use paratox_core::taxonomy::Category;
use paratox_core::trainer::{evaluate, run_full_protocol};

const DIM: usize = 32;
const SEED: u64 = 42;
/// Cluster centres sit on a seeded random sphere of this radius.
const RADIUS: f64 = 3.4;
/// Isotropic within-cluster noise.
const SIGMA: f64 = 0.75;

/// (category, count, textual, paralinguistic); 400 total, imbalanced.
const CLASSES: [(Category, usize, bool, bool); 8] = [
    (Category::Sarcasm, 72, false, true),
    (Category::Horror, 12, true, true),
    (Category::Sexual, 55, true, false),
    (Category::MentalRisk, 30, true, false),
    (Category::Ideology, 20, true, false),
    (Category::ViolenceHarm, 60, true, false),
    (Category::Discrimination, 16, true, false),
    (Category::Safe, 135, false, false),
];

fn label_for(category: Category) -> &'static str {
    match category {
        Category::Sarcasm => "Sarcasm",
        Category::Horror => "Horror",
        Category::Sexual => "Sexual Content",
        Category::MentalRisk => "Drugs",
        Category::Ideology => "Political Sensitivity",
        Category::ViolenceHarm => "Violence",
        Category::Discrimination => "Racial Discrimination",
        Category::Safe => "Safe",
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn generate() -> (Vec<SampleRecord>, FeatureStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut centres: Vec<Vec<f64>> = Vec::new();
    for _ in 0..CLASSES.len() {
        let raw: Vec<f64> = (0..DIM).map(|_| gaussian(&mut rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        centres.push(raw.iter().map(|x| x / norm * RADIUS).collect());
    }
    // Pull the rare clusters toward big neighbours so they are genuinely
    // confusable without enough minority-class gradient signal.
    for (rare, big, pull) in [(1usize, 0usize, 0.15), (6, 5, 0.15)] {
        centres[rare] = centres[rare]
            .iter()
            .zip(&centres[big])
            .map(|(r, b)| r * (1.0 - pull) + b * pull)
            .collect();
    }

    let mut records = Vec::new();
    let mut store = FeatureStore::new(DIM, StoreMeta::default());
    let mut n = 0usize;
    for (ci, &(category, count, textual, para)) in CLASSES.iter().enumerate() {
        for _ in 0..count {
            let id = format!("e2e_{n:04}.wav");
            n += 1;
            records.push(SampleRecord {
                file_name: id.clone(),
                source: SourceInfo {
                    source_type: SourceType::Synthetic,
                    name: "gaussian-fixture".to_string(),
                },
                sensitivity: Sensitivity {
                    overall: category.is_toxic(),
                    paralinguistic: para,
                    textual,
                },
                category: CategoryInfo {
                    category,
                    label: label_for(category).to_string(),
                },
                description: format!("synthetic cluster sample for {}", category.name()),
            });
            let vector: Vec<f32> = centres[ci]
                .iter()
                .map(|&c| (c + SIGMA * gaussian(&mut rng)) as f32)
                .collect();
            store
                .insert(PooledFeature {
                    sample_id: id,
                    vector,
                })
                .expect("fixture vector");
        }
    }
    (records, store)
}

fn base_config(out: PathBuf) -> RunConfig {
    RunConfig {
        output_dir: out,
        seed: 7,
        mode: Mode::Full,
        hidden: [64, 32],
        lr: 4e-4,
        lambda: 0.2,
        m: 3,
        patience: 10,
        max_epochs: 8,
        threshold: 0.5,
        stages: vec![Stage::S1Source, Stage::S2Category, Stage::S3Full],
        balanced_sampler: true,
        ..RunConfig::default()
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out_dir = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("fixtures/e2e"));
    let check_only = args.iter().any(|a| a == "--check-only");

    let (records, store) = generate();
    if !check_only {
        std::fs::create_dir_all(&out_dir).unwrap();
        std::fs::write(out_dir.join("manifest.json"), serialize_manifest(&records)).unwrap();
        let mut buf = Vec::new();
        write_store_bytes(&store, &mut buf).unwrap();
        std::fs::write(out_dir.join("features.txaf"), buf).unwrap();
        println!("wrote {} records to {}", records.len(), out_dir.display());
    }

    let split = stratified_split(&records, (0.8, 0.2, 0.0), 13).unwrap();
    println!("train {} dev {} test {}", split.train.len(), split.dev.len(), split.test.len());

    let tmp = tempdir_like();
    let run = |name: &str, mutate: &dyn Fn(&mut RunConfig)| {
        let mut cfg = base_config(tmp.join(name));
        mutate(&mut cfg);
        let t = std::time::Instant::now();
        let (model, _logs) = run_full_protocol(&cfg, &records, &split, &store).unwrap();
        let dev = evaluate(&model, &split.dev, &store, &records, 0.5).unwrap();
        let subset = dev.source.as_ref().map(|s| s.subset_accuracy).unwrap_or(f64::NAN);
        println!(
            "{name:14} acc {:.4}  macroF1 {:.4}  subset {:.4}  ({:.1}s) cat {:016x}",
            dev.category.overall_accuracy,
            dev.category.macro_f1,
            subset,
            t.elapsed().as_secs_f64(),
            model.head_hash(paratox_core::dualhead::HeadKind::Category)
        );
        dev.category.macro_f1
    };

    let full = run("full", &|_| {});
    let no_stage = run("no-multistage", &|c| c.stages = vec![Stage::S3Full]);
    let no_sampler = run("no-sampler", &|c| c.balanced_sampler = false);
    let no_source = run("no-source", &|c| c.stages = vec![Stage::S2Category]);
    println!(
        "ordering full > each ablation: {} {} {}",
        full > no_stage,
        full > no_sampler,
        full > no_source
    );
}

fn tempdir_like() -> PathBuf {
    let p = std::env::temp_dir().join("paratox-fixture-check");
    let _ = std::fs::remove_dir_all(&p);
    p
}
