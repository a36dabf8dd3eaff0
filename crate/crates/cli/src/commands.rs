//! Subcommand implementations; each delegates to one core-module pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use paratox_core::config::RunConfig;
use paratox_core::curation::{cluster_report_csv, cohens_kappa, kmeans_cluster};
use paratox_core::dualhead::{load_checkpoint, Mode};
use paratox_core::features::{
    align, mean_pool, read_store_bytes, write_store_bytes, FeatureStore, FrameMatrix, StoreMeta,
};
use paratox_core::manifest::{
    derive_stage_dataset, parse_manifest, stratified_split, DatasetSplit, SampleRecord, Stage,
};
use paratox_core::metrics::{report_to_csv, report_to_table};
use paratox_core::taxonomy::CategoryTaxonomy;
use paratox_core::trainer::{evaluate, loss_curve_csv, run_full_protocol, TrainingLog};

use crate::{CliError, Command, CurateAction};

type CliResult = Result<(), CliError>;

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn resolve(workspace: &Path, path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        workspace.join(path)
    }
}

fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>, CliError> {
    let taxonomy = CategoryTaxonomy::new();
    let bytes = std::fs::read(path)
        .map_err(|e| runtime(format!("cannot read manifest {}: {e}", path.display())))?;
    parse_manifest(&bytes, &taxonomy).map_err(validation)
}

fn read_store(path: &Path) -> Result<FeatureStore, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| runtime(format!("cannot read feature store {}: {e}", path.display())))?;
    read_store_bytes(&bytes).map_err(validation)
}

fn parse_stage(s: &str) -> Result<Stage, CliError> {
    match s {
        "S1" | "s1" => Ok(Stage::S1Source),
        "S2" | "s2" => Ok(Stage::S2Category),
        "S3" | "s3" => Ok(Stage::S3Full),
        other => Err(validation(format!("unknown stage '{other}', expected S1|S2|S3"))),
    }
}

pub fn run(workspace: &Path, command: Command) -> CliResult {
    match command {
        Command::Validate { manifest } => validate(workspace, manifest),
        Command::Split {
            manifest,
            ratios,
            seed,
            out,
        } => split(workspace, manifest, &ratios, seed, out),
        Command::Stages {
            manifest,
            split,
            stage,
            seed,
            safe_fraction,
            out,
        } => stages(workspace, manifest, split, &stage, seed, safe_fraction, out),
        Command::Pool {
            input,
            out,
            tag,
            align_manifest,
        } => pool(workspace, input, out, tag, align_manifest),
        Command::Train { config } => train(workspace, config),
        Command::Eval {
            config,
            checkpoint,
            split,
            out,
        } => eval(workspace, config, checkpoint, &split, out),
        Command::Gradcheck { dim, seed, mode } => gradcheck(dim, seed, &mode),
        Command::Curate { action } => curate(workspace, action),
        Command::Report {
            metrics,
            run_dir,
            out,
        } => report(workspace, metrics, run_dir, out),
    }
}

fn validate(workspace: &Path, manifest: PathBuf) -> CliResult {
    let path = resolve(workspace, manifest);
    let records = read_manifest(&path)?;
    let mut per_category: BTreeMap<&str, usize> = BTreeMap::new();
    let mut toxic = 0usize;
    let mut real = 0usize;
    for r in &records {
        *per_category.entry(r.category().name()).or_default() += 1;
        if r.is_toxic() {
            toxic += 1;
        }
        if matches!(r.source.source_type, paratox_core::manifest::SourceType::Real) {
            real += 1;
        }
    }
    println!("manifest OK: {} records", records.len());
    println!("  toxic {toxic}, safe {}", records.len() - toxic);
    println!("  real {real}, synthetic {}", records.len() - real);
    for (cat, n) in per_category {
        println!("  {cat}: {n}");
    }
    Ok(())
}

fn parse_ratios(text: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| validation(format!("bad ratios '{text}', expected three floats")))?;
    if parts.len() != 3 {
        return Err(validation(format!("bad ratios '{text}', expected three floats")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn split(workspace: &Path, manifest: PathBuf, ratios: &str, seed: u64, out: PathBuf) -> CliResult {
    let records = read_manifest(&resolve(workspace, manifest))?;
    let ratios = parse_ratios(ratios)?;
    let split = stratified_split(&records, ratios, seed).map_err(validation)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let out = resolve(workspace, out);
    std::fs::write(&out, split.to_json()).map_err(runtime)?;
    println!(
        "split {} -> train {} dev {} test {} ({})",
        records.len(),
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stages(
    workspace: &Path,
    manifest: PathBuf,
    split: PathBuf,
    stage: &str,
    seed: u64,
    safe_fraction: Option<f64>,
    out: Option<PathBuf>,
) -> CliResult {
    let records = read_manifest(&resolve(workspace, manifest))?;
    let stage = parse_stage(stage)?;
    let split_path = resolve(workspace, split);
    let bytes = std::fs::read(&split_path)
        .map_err(|e| runtime(format!("cannot read split {}: {e}", split_path.display())))?;
    let split = DatasetSplit::from_json(&bytes).map_err(validation)?;
    let dataset =
        derive_stage_dataset(&records, &split.train, stage, seed, safe_fraction).map_err(validation)?;
    println!(
        "stage {}: {} samples ({} toxic + {} safe)",
        stage.name(),
        dataset.sample_ids.len(),
        dataset.report.toxic,
        dataset.report.safe
    );
    for (cat, n) in &dataset.report.per_category {
        println!("  {cat}: {n}");
    }
    if let Some(out) = out {
        let out = resolve(workspace, out);
        let json = serde_json::to_vec_pretty(&dataset).map_err(runtime)?;
        std::fs::write(&out, json).map_err(runtime)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn pool(
    workspace: &Path,
    input: PathBuf,
    out: PathBuf,
    tag: String,
    align_manifest: Option<PathBuf>,
) -> CliResult {
    let input = resolve(workspace, input);
    let text = std::fs::read_to_string(&input)
        .map_err(|e| runtime(format!("cannot read {}: {e}", input.display())))?;

    // Group consecutive lines by id: one line is a pooled vector, repeats are
    // frames of the same sample.
    let meta = StoreMeta {
        extractor_tag: tag,
        ..StoreMeta::default()
    };
    let mut groups: Vec<FrameMatrix> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| validation(format!("line {}: missing id", lineno + 1)))?;
        let values: Vec<f32> = parts
            .map(|p| p.parse::<f32>())
            .collect::<Result<_, _>>()
            .map_err(|e| validation(format!("line {}: {e}", lineno + 1)))?;
        if values.is_empty() {
            return Err(validation(format!("line {}: no values", lineno + 1)));
        }
        match groups.last_mut() {
            Some(g) if g.sample_id == id => g.frames.push(values),
            _ => groups.push(FrameMatrix {
                sample_id: id.to_string(),
                frames: vec![values],
            }),
        }
    }
    if groups.is_empty() {
        return Err(validation("no feature lines in input".to_string()));
    }
    let dim = groups[0].frames[0].len();
    let mut store = FeatureStore::new(dim, meta);
    for g in &groups {
        let pooled = mean_pool(g).map_err(validation)?;
        store.insert(pooled).map_err(validation)?;
    }

    let out = resolve(workspace, out);
    let mut buf = Vec::new();
    write_store_bytes(&store, &mut buf).map_err(runtime)?;
    std::fs::write(&out, buf).map_err(runtime)?;
    println!("pooled {} samples (dim {dim}) -> {}", store.len(), out.display());

    if let Some(manifest) = align_manifest {
        let records = read_manifest(&resolve(workspace, manifest))?;
        let ids: Vec<String> = records.iter().map(|r| r.file_name.clone()).collect();
        let alignment = align(&ids, &store);
        println!(
            "alignment: {} matched, {} missing in store, {} missing in manifest",
            alignment.matched.len(),
            alignment.missing_in_store.len(),
            alignment.missing_in_manifest.len()
        );
        for id in alignment.missing_in_store.iter().take(10) {
            println!("  missing in store: {id}");
        }
    }
    Ok(())
}

fn load_config(workspace: &Path, config: PathBuf) -> Result<RunConfig, CliError> {
    let path = resolve(workspace, config);
    RunConfig::load(&path).map_err(validation)
}

fn load_split(config: &RunConfig, records: &[SampleRecord]) -> Result<DatasetSplit, CliError> {
    match &config.split {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| runtime(format!("cannot read split {}: {e}", path.display())))?;
            DatasetSplit::from_json(&bytes).map_err(validation)
        }
        None => stratified_split(records, config.ratios, config.seed).map_err(validation),
    }
}

fn train(workspace: &Path, config: PathBuf) -> CliResult {
    let config = load_config(workspace, config)?;
    let records = read_manifest(&config.manifest)?;
    let store = read_store(&config.features)?;
    let split = load_split(&config, &records)?;

    std::fs::create_dir_all(&config.output_dir).map_err(runtime)?;
    std::fs::write(config.output_dir.join("split.json"), split.to_json()).map_err(runtime)?;

    let (model, logs) = run_full_protocol(&config, &records, &split, &store).map_err(runtime)?;
    std::fs::write(config.output_dir.join("loss_curve.csv"), loss_curve_csv(&logs))
        .map_err(runtime)?;
    for log in &logs {
        println!(
            "stage {}: {} epochs, best dev metric {:.4} ({})",
            log.stage,
            log.epochs.len(),
            log.best_dev_metric,
            log.status
        );
    }
    let report = evaluate(&model, &split.dev, &store, &records, config.threshold)
        .map_err(runtime)?;
    println!(
        "dev: accuracy {:.4}, macro-F1 {:.4}",
        report.category.overall_accuracy, report.category.macro_f1
    );
    println!("artifacts in {}", config.output_dir.display());
    Ok(())
}

fn eval(
    workspace: &Path,
    config: PathBuf,
    checkpoint: PathBuf,
    split_name: &str,
    out: Option<PathBuf>,
) -> CliResult {
    let config = load_config(workspace, config)?;
    let records = read_manifest(&config.manifest)?;
    let store = read_store(&config.features)?;
    let split = load_split(&config, &records)?;
    let ids = match split_name {
        "train" => &split.train,
        "dev" => &split.dev,
        "test" => &split.test,
        other => return Err(validation(format!("unknown split '{other}'"))),
    };
    if ids.is_empty() {
        return Err(validation(format!("split '{split_name}' is empty")));
    }

    let ckpt_path = resolve(workspace, checkpoint);
    let (model, _) =
        load_checkpoint(&ckpt_path, Some(store.dim), Some(config.mode)).map_err(validation)?;
    let report = evaluate(&model, ids, &store, &records, config.threshold).map_err(runtime)?;

    print!("{}", report_to_table(&report).map_err(runtime)?);
    let out = out.unwrap_or_else(|| PathBuf::from(format!("report_{split_name}.csv")));
    let out = if out.is_absolute() { out } else { config.output_dir.join(out) };
    std::fs::create_dir_all(out.parent().unwrap_or(Path::new("."))).map_err(runtime)?;
    std::fs::write(&out, report_to_csv(&report).map_err(runtime)?).map_err(runtime)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gradcheck(dim: usize, seed: u64, mode: &str) -> CliResult {
    let mode = match mode {
        "full" => Mode::Full,
        "binary" => Mode::Binary,
        other => return Err(validation(format!("unknown mode '{other}'"))),
    };
    let max_err = paratox_core::trainer::gradient_self_check(dim, seed, mode).map_err(runtime)?;
    println!("max relative error {max_err:.3e}");
    if max_err < 1e-4 {
        println!("gradcheck OK");
        Ok(())
    } else {
        Err(validation(format!("gradient check failed: {max_err:.3e} >= 1e-4")))
    }
}

fn curate(workspace: &Path, action: CurateAction) -> CliResult {
    match action {
        CurateAction::Kappa { a, b } => {
            let read_labels = |p: PathBuf| -> Result<Vec<String>, CliError> {
                let p = resolve(workspace, p);
                Ok(std::fs::read_to_string(&p)
                    .map_err(|e| runtime(format!("cannot read {}: {e}", p.display())))?
                    .lines()
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect())
            };
            let a = read_labels(a)?;
            let b = read_labels(b)?;
            let kappa = cohens_kappa(&a, &b).map_err(validation)?;
            println!("kappa {kappa:.6} over {} items", a.len());
            Ok(())
        }
        CurateAction::Kmeans {
            input,
            k,
            seed,
            max_iters,
            tol,
            out,
        } => {
            let input = resolve(workspace, input);
            let text = std::fs::read_to_string(&input)
                .map_err(|e| runtime(format!("cannot read {}: {e}", input.display())))?;
            let mut ids = Vec::new();
            let mut vectors: Vec<Vec<f64>> = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut parts = line.split_whitespace();
                ids.push(
                    parts
                        .next()
                        .ok_or_else(|| validation(format!("line {}: missing id", lineno + 1)))?
                        .to_string(),
                );
                vectors.push(
                    parts
                        .map(|p| p.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| validation(format!("line {}: {e}", lineno + 1)))?,
                );
            }
            let result = kmeans_cluster(&ids, &vectors, k, seed, max_iters, tol)
                .map_err(validation)?;
            println!(
                "k-means: k {k}, inertia {:.6}, {} iterations",
                result.inertia, result.iterations
            );
            let csv = cluster_report_csv(&result.assignments);
            match out {
                Some(out) => {
                    let out = resolve(workspace, out);
                    std::fs::write(&out, csv).map_err(runtime)?;
                    println!("wrote {}", out.display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

fn report(
    workspace: &Path,
    metrics: Option<PathBuf>,
    run_dir: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CliResult {
    match (metrics, run_dir) {
        (Some(metrics), None) => {
            let path = resolve(workspace, metrics);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
            let rows = paratox_core::metrics::parse_report_csv(&text).map_err(validation)?;
            let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (key, value) in rows {
                println!("{key:width$}  {value}");
            }
            Ok(())
        }
        (None, Some(run_dir)) => {
            let dir = resolve(workspace, run_dir);
            let mut logs: Vec<TrainingLog> = Vec::new();
            for stage in ["s1", "s2", "s3"] {
                let path = dir.join(format!("stage_{stage}.jsonl"));
                if !path.exists() {
                    continue;
                }
                let text = std::fs::read_to_string(&path).map_err(runtime)?;
                let mut log = TrainingLog {
                    stage: stage.to_uppercase(),
                    epochs: Vec::new(),
                    best_epoch: None,
                    best_dev_metric: f64::NEG_INFINITY,
                    status: "loaded".to_string(),
                };
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    log.epochs.push(serde_json::from_str(line).map_err(validation)?);
                }
                logs.push(log);
            }
            if logs.is_empty() {
                return Err(validation(format!(
                    "no stage_*.jsonl logs under {}",
                    dir.display()
                )));
            }
            let csv = loss_curve_csv(&logs);
            let out = resolve(workspace, out.unwrap_or_else(|| PathBuf::from("loss_curve.csv")));
            std::fs::write(&out, &csv).map_err(runtime)?;
            println!("wrote {} ({} stages)", out.display(), logs.len());
            Ok(())
        }
        _ => Err(validation(
            "pass exactly one of --metrics or --run-dir".to_string(),
        )),
    }
}
