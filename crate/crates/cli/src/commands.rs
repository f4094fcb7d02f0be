//! One function per subcommand. Each reads its upstream artifacts, writes
//! its outputs atomically and returns a short summary for stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use proed_core::dataset::{label_examples, split, DatasetManifest, Split, SplitConfig};
use proed_core::dedup::{dedup_pass, dhash_bytes, hash_index_text, RemovalReason, SimilarityThreshold};
use proed_core::evaluation::{compare_models, evaluate, EvalReport};
use proed_core::ingest::{
    assets_text, extract_image_links, read_assets, ArchiveAdapter, AssetStore, DefaultFetcher, FetchPolicy,
    ImageAsset, SourceAdapter, StoreImageLoader, INDEX_FILE,
};
use proed_core::io::data_lines;
use proed_core::sampling::{filter_assets_by_plan, plan_stratified, SamplePlan};
use proed_core::training::{
    checkpoint_file_name, export_curves, fine_tune, head_seed, metrics_csv, prepare_backbone, select_best,
    timing_csv, Classifier, HeadCheckpoint, ModelBackendDescriptor, WeightStore,
};
use proed_core::trend::{
    aggregate_monthly, analyze, classify_batch, fit_csv, profile_csv, series_csv, MonthLabels, TrendReport,
};
use serde::{Deserialize, Serialize};

use crate::workspace::{note_digest, read_upstream, Workspace};

pub const DEDUPED_ASSETS: &str = "deduped_assets.jsonl";
pub const REMOVALS: &str = "dedup_removals.tsv";
pub const HASH_INDEX: &str = "hash_index.tsv";
pub const DEDUP_REPORT: &str = "dedup_report.json";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const MANIFEST: &str = "dataset_manifest.tsv";
pub const EXCLUSIONS: &str = "dataset_exclusions.tsv";
pub const DATASET_REPORT: &str = "dataset_report.json";
pub const SAMPLE_PLAN: &str = "sample_plan.tsv";
pub const CLASSIFIED: &str = "classified.json";
pub const TREND_DIR: &str = "trend";
pub const TREND_JSON: &str = "trend.json";
pub const CURVES: &str = "curves.csv";
pub const TIMING: &str = "timing.csv";
pub const BEST: &str = "best.json";
/// Seed for stand-in backbone weights; independent of the run seed so every
/// run of an architecture shares one frozen extractor.
const STUB_WEIGHT_SEED: u64 = 0;

fn with_digest(ws: &Workspace, body: &str) -> String {
    proed_core::io::digest_line(&ws.digest) + body
}

#[derive(Serialize)]
struct IngestReport {
    archive: String,
    source: String,
    parse: proed_core::ingest::ParseReport,
    image_links: usize,
    store_status: BTreeMap<String, usize>,
    source_classes: BTreeMap<String, usize>,
}

pub fn ingest(ws: &Workspace) -> Result<String> {
    let taxonomy = ws.config.taxonomy()?;
    let archive = ws.resolve(&ws.config.paths.archive);
    let adapter = ArchiveAdapter::new(&archive);
    let (records, parse) = adapter.load()?;
    for issue in &parse.issues {
        log::warn!("{}:{}: {:?}: {}", archive.display(), issue.line, issue.kind, issue.detail);
    }
    let links = extract_image_links(&records);
    let mut store = AssetStore::open(ws.store_dir())?;
    let f = &ws.config.fetch;
    let policy = FetchPolicy { timeout: Duration::from_secs(f.timeout_secs), max_retries: f.max_retries, max_parallel: f.max_parallel };
    let fetcher = DefaultFetcher::new(policy.timeout);
    let run = store.fetch_images(&links, &taxonomy, &policy, &fetcher)?;
    store.save_index(Some(&ws.digest))?;

    let mut source_classes = BTreeMap::new();
    for a in store.assets() {
        *source_classes.entry(a.source_class.as_str().to_string()).or_insert(0) += 1;
    }
    let report = IngestReport {
        archive: ws.relative(&archive),
        source: adapter.name().to_string(),
        parse: parse.clone(),
        image_links: links.len(),
        store_status: store.status_counts(),
        source_classes,
    };
    ws.write_json(&ws.work(INGEST_REPORT), &report)?;
    Ok(format!(
        "ingest: {} records ({} skipped lines), {} links; fetched {}, failed {}, skipped non-image {}, already present {}",
        parse.records,
        parse.issues.len(),
        links.len(),
        run.fetched,
        run.failed,
        run.skipped_non_image,
        run.already_present
    ))
}

fn store_index(ws: &Workspace) -> Result<(PathBuf, Vec<ImageAsset>)> {
    let path = ws.store_dir().join(INDEX_FILE);
    let text = read_upstream(&path, "ingest")?;
    note_digest(&path, &text, &ws.digest);
    Ok((path.clone(), read_assets(&path)?))
}

fn deduped_assets(ws: &Workspace) -> Result<Vec<ImageAsset>> {
    let path = ws.work(DEDUPED_ASSETS);
    let text = read_upstream(&path, "dedup")?;
    note_digest(&path, &text, &ws.digest);
    Ok(read_assets(&path)?)
}

#[derive(Serialize)]
struct DedupReport {
    threshold: f64,
    input_assets: usize,
    kept: usize,
    removed: BTreeMap<String, usize>,
    near_duplicate_clusters: Vec<Vec<String>>,
    hash_failures: Vec<proed_core::dedup::HashFailure>,
}

pub fn dedup(ws: &Workspace) -> Result<String> {
    let taxonomy = ws.config.taxonomy()?;
    let threshold = SimilarityThreshold::new(ws.config.dedup.threshold)
        .map_err(|e| anyhow::anyhow!("dedup.threshold: {e}"))?;
    let (_, assets) = store_index(ws)?;
    let fetched: Vec<ImageAsset> = assets.into_iter().filter(|a| a.is_fetched()).collect();
    let input_assets = fetched.len();
    let root = ws.store_dir();
    let hash_of = |a: &ImageAsset| -> Result<_, String> {
        let rel = a.byte_path.as_ref().ok_or("no stored bytes")?;
        let bytes = fs::read(root.join(rel)).map_err(|e| e.to_string())?;
        dhash_bytes(&bytes).map_err(|e| e.to_string())
    };
    let out = dedup_pass(fetched, hash_of, threshold, Some(&taxonomy));

    let mut removals = out.removals.clone();
    removals.sort_by(|a, b| (&a.removed_tweet_id, &a.removed_url).cmp(&(&b.removed_tweet_id, &b.removed_url)));
    let mut tsv = String::from("removed_asset_id\treason\tcanonical_asset_id\tremoved_tweet_id\tremoved_url\n");
    let mut removed = BTreeMap::new();
    for r in &removals {
        let reason = match r.reason {
            RemovalReason::SameUrl => "same_url",
            RemovalReason::SameBytes => "same_bytes",
            RemovalReason::NearDuplicate => "near_duplicate",
        };
        *removed.entry(reason.to_string()).or_insert(0) += 1;
        tsv.push_str(&format!("{}\t{reason}\t{}\t{}\t{}\n", r.removed_asset_id, r.canonical_asset_id, r.removed_tweet_id, r.removed_url));
    }
    let mut clusters: Vec<Vec<String>> = out
        .clusters
        .iter()
        .filter(|c| c.member_asset_ids.len() > 1)
        .map(|c| {
            let mut m = c.member_asset_ids.clone();
            m.sort();
            m
        })
        .collect();
    clusters.sort();

    ws.write_text(&ws.work(DEDUPED_ASSETS), &assets_text(&out.kept, Some(&ws.digest)))?;
    ws.write_text(&ws.work(REMOVALS), &with_digest(ws, &tsv))?;
    ws.write_text(&ws.work(HASH_INDEX), &hash_index_text(&out.hashes, Some(&ws.digest)))?;
    for f in &out.hash_failures {
        log::warn!("could not hash {}: {}", f.asset_id, f.detail);
    }
    let report = DedupReport {
        threshold: threshold.value(),
        input_assets,
        kept: out.kept.len(),
        removed: removed.clone(),
        near_duplicate_clusters: clusters,
        hash_failures: out.hash_failures.clone(),
    };
    ws.write_json(&ws.work(DEDUP_REPORT), &report)?;
    let parts: Vec<String> = removed.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("dedup: {input_assets} fetched assets -> {} kept; removed: {}", out.kept.len(), if parts.is_empty() { "none".into() } else { parts.join(", ") }))
}

#[derive(Serialize)]
struct DatasetReport {
    examples: usize,
    excluded: usize,
    class_counts: BTreeMap<String, proed_core::dataset::ClassCounts>,
    warnings: Vec<String>,
}

pub fn dataset(ws: &Workspace) -> Result<String> {
    let assets = deduped_assets(ws)?;
    let (examples, exclusions) = label_examples(&assets);
    let d = &ws.config.dataset;
    let cfg = SplitConfig { seed: d.seed, test_frac: d.test_frac, val_frac: d.val_frac, allow_single_class: d.allow_single_class };
    let manifest = split(&examples, &cfg)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let mut tsv = String::from("asset_id\treason\n");
    for e in &exclusions {
        tsv.push_str(&format!("{}\t{}\n", e.asset_id, e.reason));
    }
    ws.write_text(&ws.work(MANIFEST), &manifest.to_text(Some(&ws.digest)))?;
    ws.write_text(&ws.work(EXCLUSIONS), &with_digest(ws, &tsv))?;
    let report = DatasetReport {
        examples: manifest.len(),
        excluded: exclusions.len(),
        class_counts: manifest.class_counts.iter().map(|(s, c)| (s.to_string(), *c)).collect(),
        warnings: manifest.warnings.clone(),
    };
    ws.write_json(&ws.work(DATASET_REPORT), &report)?;
    let sizes: Vec<String> = Split::ALL.iter().map(|s| format!("{s} {}", manifest.class_counts[s].total())).collect();
    Ok(format!("dataset: {} labeled examples ({}), {} excluded", manifest.len(), sizes.join(", "), exclusions.len()))
}

fn manifest(ws: &Workspace) -> Result<DatasetManifest> {
    let path = ws.work(MANIFEST);
    let text = read_upstream(&path, "dataset")?;
    note_digest(&path, &text, &ws.digest);
    Ok(DatasetManifest::from_text(&text)?)
}

/// Pointer to the selected checkpoint of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPointer {
    pub epoch: usize,
    /// Relative to the run directory.
    pub checkpoint: String,
    pub val_accuracy: f64,
}

#[derive(Serialize)]
struct CheckpointEntry {
    epoch: usize,
    checkpoint: String,
    val_accuracy: f64,
}

#[derive(Serialize)]
struct RunRecord {
    run: String,
    architecture: String,
    backbone_id: String,
    descriptor: ModelBackendDescriptor,
    frozen_parameters: usize,
    trainable_parameters: usize,
    train: proed_core::training::TrainConfig,
    n_train: usize,
    n_val: usize,
    skipped: Vec<proed_core::training::SkippedImage>,
    best_epoch: usize,
    checkpoints: Vec<CheckpointEntry>,
}

pub struct TrainArgs {
    pub run: Option<String>,
    pub stub_weights: bool,
}

pub fn train(ws: &Workspace, args: &TrainArgs) -> Result<String> {
    let arch = ws.config.architecture()?;
    let run = args.run.clone().unwrap_or_else(|| arch.as_str().to_string());
    let manifest = manifest(ws)?;
    let assets = deduped_assets(ws)?;
    let weights = WeightStore::new(ws.weights_dir());
    if args.stub_weights && arch.needs_pretrained_weights() {
        let p = weights.ensure_seeded(arch, STUB_WEIGHT_SEED)?;
        log::info!("using stand-in frozen weights at {}", p.display());
    }
    let descriptor = ModelBackendDescriptor::for_architecture(arch);
    let config = ws.config.train.train_config();
    let mut model = prepare_backbone(&descriptor, Some(&weights), head_seed(config.seed))?;
    let census = model.census();
    let loader = StoreImageLoader::new(ws.store_dir(), &assets);
    let train = manifest.examples_in(Split::Train);
    let val = manifest.examples_in(Split::Val);

    let run_dir = ws.run_dir(&run);
    let ck_dir = run_dir.join("checkpoints");
    if ck_dir.exists() {
        fs::remove_dir_all(&ck_dir).with_context(|| format!("clearing {}", ck_dir.display()))?;
    }
    let outcome = fine_tune(&mut model, &train, &val, &loader, &config, &ck_dir)?;
    for s in &outcome.skipped {
        log::warn!("skipped {}: {}", s.asset_id, s.detail);
    }
    // Re-emit each checkpoint with the config digest alongside its fields.
    for c in &outcome.checkpoints {
        ws.write_json(&c.path, &HeadCheckpoint::read(&c.path)?)?;
    }
    let best = select_best(&outcome.metrics, &outcome.checkpoints)?;
    let best_name = format!("checkpoints/{}", checkpoint_file_name(best.epoch));

    ws.write_text(&run_dir.join("config.toml"), &ws.config.to_toml())?;
    ws.write_text(&run_dir.join("metrics.csv"), &with_digest(ws, &metrics_csv(&outcome.metrics)))?;
    ws.write_text(&run_dir.join(CURVES), &with_digest(ws, &export_curves(&outcome.metrics)))?;
    ws.write_text(&run_dir.join(TIMING), &with_digest(ws, &timing_csv(&outcome.metrics)))?;
    ws.write_json(&run_dir.join(BEST), &BestPointer { epoch: best.epoch, checkpoint: best_name.clone(), val_accuracy: best.val_accuracy })?;
    let record = RunRecord {
        run: run.clone(),
        architecture: arch.as_str().to_string(),
        backbone_id: model.backbone().backbone_id(),
        descriptor,
        frozen_parameters: census.frozen_count,
        trainable_parameters: census.trainable_count,
        train: config,
        n_train: train.len(),
        n_val: val.len(),
        skipped: outcome.skipped.clone(),
        best_epoch: best.epoch,
        checkpoints: outcome
            .checkpoints
            .iter()
            .map(|c| CheckpointEntry { epoch: c.epoch, checkpoint: format!("checkpoints/{}", checkpoint_file_name(c.epoch)), val_accuracy: c.val_accuracy })
            .collect(),
    };
    ws.write_json(&run_dir.join("run.json"), &record)?;
    Ok(format!(
        "train: {run} ({arch}), {} epochs on {} train / {} val images; best epoch {} (val accuracy {:.4}) -> {}",
        outcome.metrics.len(),
        train.len(),
        val.len(),
        best.epoch,
        best.val_accuracy,
        ws.relative(&run_dir.join(&best_name))
    ))
}

/// Loads the selected checkpoint of `run`.
fn load_best(ws: &Workspace, run: &str) -> Result<(Classifier, String)> {
    let run_dir = ws.run_dir(run);
    let best_path = run_dir.join(BEST);
    let text = read_upstream(&best_path, &format!("train --run {run}"))?;
    note_digest(&best_path, &text, &ws.digest);
    let best: BestPointer = serde_json::from_str(&text).with_context(|| format!("parsing {}", best_path.display()))?;
    let clf = Classifier::load(&run_dir.join(&best.checkpoint), Some(&WeightStore::new(ws.weights_dir())))?;
    Ok((clf, format!("{run}/{}", checkpoint_file_name(best.epoch))))
}

pub fn default_run(ws: &Workspace, run: Option<String>) -> String {
    run.unwrap_or_else(|| ws.config.train.arch.clone())
}

pub fn eval(ws: &Workspace, run: &str, split_name: Split, compare: Option<&str>) -> Result<String> {
    let manifest = manifest(ws)?;
    let assets = deduped_assets(ws)?;
    let (clf, checkpoint_id) = load_best(ws, run)?;
    let loader = StoreImageLoader::new(ws.store_dir(), &assets);
    let examples = manifest.examples_in(split_name);
    let (_, report) = evaluate(&clf, &checkpoint_id, &examples, &loader)?;
    let file = format!("eval_{split_name}.json");
    ws.write_json(&ws.run_dir(run).join(&file), &report)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let mut msg = format!(
        "eval: {checkpoint_id} on {split_name} (n={}): accuracy {} precision {} recall {} f1 {}",
        report.n,
        cell(report.accuracy),
        cell(report.precision),
        cell(report.recall),
        cell(report.f1)
    );
    if let Some(other) = compare {
        let path = ws.run_dir(other).join(&file);
        let text = read_upstream(&path, &format!("eval --run {other} --split {split_name}"))?;
        let theirs: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let table = compare_models(&report, &theirs)?;
        let out = ws.run_dir(run).join(format!("compare_{other}_{split_name}.csv"));
        ws.write_text(&out, &with_digest(ws, &table.to_csv()))?;
        msg.push('\n');
        msg.push_str(&table.to_csv());
    }
    Ok(msg)
}

pub fn plan_sample(ws: &Workspace, out: Option<&Path>) -> Result<String> {
    let s = &ws.config.sampling;
    let plan = plan_stratified(s.start, s.end, s.days_per_month, s.seed)?;
    let path = out.map(|p| ws.resolve(p)).unwrap_or_else(|| ws.work(SAMPLE_PLAN));
    ws.write_text(&path, &plan.to_text(Some(&ws.digest)))?;
    Ok(format!("plan-sample: {} months, {} days each -> {}", plan.strata.len(), plan.days_per_month, ws.relative(&path)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classified {
    pub run: String,
    pub checkpoint: String,
    pub plan: String,
    pub hashtags: Vec<String>,
    pub months: Vec<MonthLabels>,
}

pub fn classify(ws: &Workspace, run: &str, plan_path: Option<&Path>) -> Result<String> {
    let plan_path = plan_path.map(|p| ws.resolve(p)).unwrap_or_else(|| ws.work(SAMPLE_PLAN));
    let text = read_upstream(&plan_path, "plan-sample")?;
    note_digest(&plan_path, &text, &ws.digest);
    let plan = SamplePlan::from_text(&text)?;
    let (_, assets) = store_index(ws)?;
    let tags = &ws.config.sampling.hashtags;
    let population: Vec<ImageAsset> = assets
        .into_iter()
        .filter(|a| a.is_fetched() && a.hashtags.iter().any(|h| tags.contains(h)))
        .collect();
    let groups = filter_assets_by_plan(&population, &plan);
    let (clf, checkpoint) = load_best(ws, run)?;
    let loader = StoreImageLoader::new(ws.store_dir(), &population);
    let months = classify_batch(&clf, &groups, &loader);
    let n: usize = months.iter().map(|m| m.labels.len()).sum();
    let failed: usize = months.iter().map(|m| m.undecodable.len()).sum();
    let out = Classified { run: run.to_string(), checkpoint, plan: ws.relative(&plan_path), hashtags: tags.clone(), months };
    ws.write_json(&ws.work(CLASSIFIED), &out)?;
    Ok(format!(
        "classify: {n} images across {} planned months ({} undecodable) from {} candidate posts",
        out.months.len(),
        failed,
        population.len()
    ))
}

pub fn trend(ws: &Workspace) -> Result<String> {
    let path = ws.work(CLASSIFIED);
    let text = read_upstream(&path, "classify")?;
    note_digest(&path, &text, &ws.digest);
    let classified: Classified = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let aggs = aggregate_monthly(&classified.months);
    let report = analyze(&aggs, ws.config.trend.degree)?;
    for w in report.linear.warnings.iter().chain(&report.polynomial.warnings) {
        log::warn!("{w}");
    }
    let dir = ws.work(TREND_DIR);
    let d = Some(ws.digest.as_str());
    ws.write_json(&dir.join(TREND_JSON), &report)?;
    ws.write_text(&dir.join("series.csv"), &series_csv(&aggs, d))?;
    ws.write_text(&dir.join("profile.csv"), &profile_csv(&report.seasonal, d))?;
    ws.write_text(&dir.join("linear_fit.csv"), &fit_csv(&aggs, &report.linear, d))?;
    ws.write_text(&dir.join("polynomial_fit.csv"), &fit_csv(&aggs, &report.polynomial, d))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    Ok(format!(
        "trend: {} months; linear r2 {} p {}; degree-{} r2 {} p {}",
        aggs.len(),
        fmt(report.linear.r_squared),
        fmt(report.linear.p_value),
        report.polynomial.degree(),
        fmt(report.polynomial.r_squared),
        fmt(report.polynomial.p_value)
    ))
}

pub fn read_trend(ws: &Workspace) -> Result<(String, TrendReport)> {
    let path = ws.work(TREND_DIR).join(TREND_JSON);
    let text = read_upstream(&path, "trend")?;
    let report = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((text, report))
}

/// `(run name, curves.csv text)` for every run that has curves, by name.
pub fn read_curves(ws: &Workspace) -> Result<Vec<(String, String)>> {
    let dir = ws.runs_dir();
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(&dir) {
        for e in entries {
            let e = e?;
            let p = e.path().join(CURVES);
            if p.is_file() {
                out.push((e.file_name().to_string_lossy().into_owned(), fs::read_to_string(&p)?));
            }
        }
    }
    if out.is_empty() {
        bail!("no training curves under {}; run `proed train` first", dir.display());
    }
    out.sort();
    Ok(out)
}

/// Rows of a curves file, skipping its header.
pub fn curve_rows(text: &str) -> impl Iterator<Item = &str> {
    data_lines(text).skip(1)
}
