//! Writes the golden format fixtures: a reference checkpoint, a reference
//! metrics CSV, and deliberately corrupted header variants.
//!
//! Usage: gen_golden [output-dir]

use std::path::PathBuf;

use paratox_core::dualhead::{checkpoint_bytes, init_model, Mode};
use paratox_core::metrics::{binary_metrics, category_metrics, report_to_csv, source_metrics, MetricsReport};
use paratox_core::taxonomy::Category;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("fixtures/golden"));
    std::fs::create_dir_all(&out).unwrap();

    // Reference checkpoint: a small seeded full-mode model.
    let model = init_model(8, [4, 3], 5, Mode::Full).unwrap();
    let ckpt = checkpoint_bytes(&model, None);
    std::fs::write(out.join("model.txck"), &ckpt).unwrap();

    let mut bad_ckpt = ckpt.clone();
    bad_ckpt[0] ^= 0xFF;
    std::fs::write(out.join("bad_magic.txck"), &bad_ckpt).unwrap();

    // Corrupted feature store headers, derived from the e2e store.
    let store = std::fs::read("fixtures/e2e/features.txaf").expect("run gen_fixture first");
    let mut bad_store = store.clone();
    bad_store[0] ^= 0xFF;
    std::fs::write(out.join("bad_magic.txaf"), &bad_store).unwrap();
    std::fs::write(out.join("truncated.txaf"), &store[..40]).unwrap();

    // Reference metrics CSV from a small hand-checkable prediction set.
    use Category::*;
    let pred = [Sarcasm, Sarcasm, Horror, Safe, ViolenceHarm, Safe, Sexual, Discrimination];
    let truth = [Sarcasm, Horror, Horror, Safe, ViolenceHarm, ViolenceHarm, Sexual, Discrimination];
    let src_pred = [(true, false), (false, true), (true, true), (false, false)];
    let src_truth = [(true, false), (false, true), (true, false), (false, false)];
    let report = MetricsReport {
        sample_count: pred.len(),
        category: category_metrics(&pred, &truth).unwrap(),
        binary: binary_metrics(&pred, &truth).unwrap(),
        source: Some(source_metrics(&src_pred, &src_truth).unwrap()),
    };
    std::fs::write(out.join("metrics.csv"), report_to_csv(&report).unwrap()).unwrap();

    println!("wrote golden fixtures to {}", out.display());
}
