//! Run configuration: a TOML file, flag overrides on top, and the digest that
//! every artifact carries.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use proed_core::dedup::SimilarityThreshold;
use proed_core::ingest::{HashtagTaxonomy, DEFAULT_NOT_PRO_ED, DEFAULT_PRO_ED};
use proed_core::io::sha256_hex;
use proed_core::sampling::{plan_stratified, MonthKey};
use proed_core::training::{Architecture, TrainConfig};
use proed_core::trend::DEFAULT_DEGREE;
use serde::{Deserialize, Serialize};

pub const DEFAULT_CONFIG_FILE: &str = "proed.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Newline-delimited post metadata.
    pub archive: PathBuf,
    pub store: PathBuf,
    pub work: PathBuf,
    pub runs: PathBuf,
    pub reports: PathBuf,
    pub weights: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            archive: "archive/tweets.jsonl".into(),
            store: "store".into(),
            work: "work".into(),
            runs: "runs".into(),
            reports: "reports".into(),
            weights: "weights".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomySection {
    pub pro_ed: Vec<String>,
    pub not_pro_ed: Vec<String>,
}

impl Default for TaxonomySection {
    fn default() -> Self {
        Self {
            pro_ed: DEFAULT_PRO_ED.iter().map(|s| s.to_string()).collect(),
            not_pro_ed: DEFAULT_NOT_PRO_ED.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_parallel: usize,
}

impl Default for FetchSection {
    fn default() -> Self {
        Self { timeout_secs: 30, max_retries: 2, max_parallel: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub threshold: f64,
}

impl Default for DedupSection {
    fn default() -> Self {
        Self { threshold: SimilarityThreshold::DEFAULT.value() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub seed: u64,
    pub test_frac: f64,
    pub val_frac: f64,
    pub allow_single_class: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { seed: 0, test_frac: 0.20, val_frac: 0.10, allow_single_class: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub arch: String,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            arch: Architecture::ToyLinear.as_str().to_string(),
            epochs: t.epochs,
            seed: t.seed,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            optimizer: t.optimizer_id,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            seed: self.seed,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            optimizer_id: self.optimizer.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub start: MonthKey,
    pub end: MonthKey,
    pub days_per_month: u32,
    pub seed: u64,
    /// Posts carrying any of these hashtags form the population to classify.
    pub hashtags: Vec<String>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            start: MonthKey::new(2017, 1).unwrap(),
            end: MonthKey::new(2022, 6).unwrap(),
            days_per_month: 3,
            seed: 0,
            hashtags: vec!["selfie".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendSection {
    pub degree: usize,
}

impl Default for TrendSection {
    fn default() -> Self {
        Self { degree: DEFAULT_DEGREE }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub taxonomy: TaxonomySection,
    pub fetch: FetchSection,
    pub dedup: DedupSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub sampling: SamplingSection,
    pub trend: TrendSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    /// Canonical serialization; every field is written, in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn taxonomy(&self) -> Result<HashtagTaxonomy> {
        HashtagTaxonomy::new(&self.taxonomy.pro_ed, &self.taxonomy.not_pro_ed)
            .map_err(|e| anyhow::anyhow!("taxonomy: {e}"))
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Ok(self.train.arch.parse::<Architecture>()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    /// Dotted config key, e.g. `dedup.threshold`.
    pub key: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{s}: {}: {}", self.key, self.message)
    }
}

/// Checks a config. Errors make the config unusable; warnings flag values
/// that differ from the reference protocol.
pub fn validate_config(c: &PipelineConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut err = |key: &str, message: String| out.push(Finding { severity: Severity::Error, key: key.into(), message });

    if let Err(e) = HashtagTaxonomy::new(&c.taxonomy.pro_ed, &c.taxonomy.not_pro_ed) {
        err("taxonomy", e.to_string());
    }
    let in_open_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_open_unit(c.dataset.test_frac) {
        err("dataset.test_frac", format!("{} is outside (0, 1)", c.dataset.test_frac));
    }
    if !in_open_unit(c.dataset.val_frac) {
        err("dataset.val_frac", format!("{} is outside (0, 1)", c.dataset.val_frac));
    }
    if SimilarityThreshold::new(c.dedup.threshold).is_err() {
        err("dedup.threshold", format!("{} is outside (0, 1]", c.dedup.threshold));
    }
    if c.trend.degree < 1 {
        err("trend.degree", "must be at least 1".into());
    }
    if c.train.arch.parse::<Architecture>().is_err() {
        err("train.arch", format!("unknown architecture {:?}", c.train.arch));
    }
    if let Err(e) = c.train.train_config().validate() {
        err("train", e.to_string());
    }
    if c.fetch.max_parallel == 0 {
        err("fetch.max_parallel", "must be at least 1".into());
    }
    if c.sampling.hashtags.is_empty() {
        err("sampling.hashtags", "at least one hashtag is needed".into());
    }
    if let Err(e) = plan_stratified(c.sampling.start, c.sampling.end, c.sampling.days_per_month, c.sampling.seed) {
        err("sampling", e.to_string());
    }

    let mut warn = |key: &str, differs: bool, reference: String| {
        if differs {
            out.push(Finding { severity: Severity::Warning, key: key.into(), message: format!("reference default is {reference}") });
        }
    };
    let d = PipelineConfig::default();
    warn("dedup.threshold", c.dedup.threshold != d.dedup.threshold, format!("{:.2}", d.dedup.threshold));
    warn("train.epochs", c.train.epochs != d.train.epochs, d.train.epochs.to_string());
    warn("dataset.test_frac", c.dataset.test_frac != d.dataset.test_frac, format!("{:.2}", d.dataset.test_frac));
    warn("sampling.days_per_month", c.sampling.days_per_month != d.sampling.days_per_month, d.sampling.days_per_month.to_string());
    out
}

pub fn errors(findings: &[Finding]) -> impl Iterator<Item = &Finding> {
    findings.iter().filter(|f| f.severity == Severity::Error)
}

/// Values given on the command line; each one replaces its config key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub archive: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub dataset_seed: Option<u64>,
    pub test_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub allow_single_class: bool,
    pub arch: Option<String>,
    pub epochs: Option<usize>,
    pub train_seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub start: Option<MonthKey>,
    pub end: Option<MonthKey>,
    pub sample_seed: Option<u64>,
    pub days_per_month: Option<u32>,
    pub degree: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, c: &mut PipelineConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut c.paths.archive, &self.archive);
        set(&mut c.dedup.threshold, &self.threshold);
        set(&mut c.dataset.seed, &self.dataset_seed);
        set(&mut c.dataset.test_frac, &self.test_frac);
        set(&mut c.dataset.val_frac, &self.val_frac);
        if self.allow_single_class {
            c.dataset.allow_single_class = true;
        }
        set(&mut c.train.arch, &self.arch);
        set(&mut c.train.epochs, &self.epochs);
        set(&mut c.train.seed, &self.train_seed);
        set(&mut c.train.batch_size, &self.batch_size);
        set(&mut c.train.learning_rate, &self.learning_rate);
        set(&mut c.sampling.start, &self.start);
        set(&mut c.sampling.end, &self.end);
        set(&mut c.sampling.seed, &self.sample_seed);
        set(&mut c.sampling.days_per_month, &self.days_per_month);
        set(&mut c.trend.degree, &self.degree);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_clean() {
        assert!(validate_config(&PipelineConfig::default()).is_empty());
    }

    #[test]
    fn bad_threshold_names_key() {
        let mut c = PipelineConfig::default();
        c.dedup.threshold = 1.5;
        let errs: Vec<_> = errors(&validate_config(&c)).cloned().collect();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].key, "dedup.threshold");
    }

    #[test]
    fn short_training_warns() {
        let mut c = PipelineConfig::default();
        c.train.epochs = 5;
        let f = validate_config(&c);
        assert_eq!(errors(&f).count(), 0);
        assert!(f.iter().any(|w| w.key == "train.epochs" && w.message == "reference default is 20"));
    }

    #[test]
    fn round_trip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = PipelineConfig::from_toml("[dedup]\nthreshold = 0.95\n").unwrap();
        assert_eq!(partial.dedup.threshold, 0.95);
        assert_eq!(partial.train, c.train);
        assert_ne!(partial.digest(), c.digest());
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = PipelineConfig::from_toml("[dedup]\nthreshold = 0.9\ncolour = 1\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        assert!(e.contains("colour"), "{e}");
    }

    #[test]
    fn overrides_win() {
        let mut c = PipelineConfig::default();
        Overrides { epochs: Some(3), degree: Some(2), ..Default::default() }.apply(&mut c);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.trend.degree, 2);
    }
}
