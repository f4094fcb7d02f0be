//! Numeric labels and reproducible train/val/test splits.
//!
//! Label 0 is Pro-ED, label 1 is Not Pro-ED. Split sizes round half away from
//! zero with the test split sized first:
//! `test = round(test_frac * N)`, `val = round(val_frac * (N - test))`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{ImageAsset, SourceClass};
use crate::io::digest_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    ProEd = 0,
    NotProEd = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::ProEd),
            1 => Some(Label::NotProEd),
            _ => None,
        }
    }

    pub fn from_source_class(c: SourceClass) -> Option<Label> {
        match c {
            SourceClass::ProEd => Some(Label::ProEd),
            SourceClass::NotProEd => Some(Label::NotProEd),
            SourceClass::Conflict | SourceClass::Unlabeled => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub asset_id: String,
    pub label: Label,
    pub source_class: SourceClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub asset_id: String,
    pub reason: String,
}

/// Maps Pro-ED to 0 and Not Pro-ED to 1; everything else is excluded.
pub fn label_examples(assets: &[ImageAsset]) -> (Vec<LabeledExample>, Vec<Exclusion>) {
    let mut examples = Vec::new();
    let mut excluded = Vec::new();
    for a in assets {
        match Label::from_source_class(a.source_class) {
            Some(label) => examples.push(LabeledExample {
                asset_id: a.asset_id.clone(),
                label,
                source_class: a.source_class,
            }),
            None => excluded.push(Exclusion {
                asset_id: a.asset_id.clone(),
                reason: match a.source_class {
                    SourceClass::Conflict => "cross-class hashtags".into(),
                    _ => "no taxonomy hashtag".into(),
                },
            }),
        }
    }
    (examples, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub test_frac: f64,
    pub val_frac: f64,
    pub allow_single_class: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { seed: 0, test_frac: 0.20, val_frac: 0.10, allow_single_class: false }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("split fractions must lie in (0, 1): test_frac={test_frac}, val_frac={val_frac}")]
    BadFraction { test_frac: f64, val_frac: f64 },
    #[error("{n} examples cannot populate train, val and test; the smallest viable N is {min_n}")]
    TooSmall { n: usize, min_n: usize },
    #[error("all {n} examples carry label {label}; pass --allow-single-class to proceed")]
    SingleClass { n: usize, label: u8 },
    #[error("manifest line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
}

/// `(train, val, test)` sizes for `n` examples.
pub fn split_sizes(n: usize, test_frac: f64, val_frac: f64) -> (usize, usize, usize) {
    let test = ((test_frac * n as f64).round() as usize).min(n);
    let rest = n - test;
    let val = ((val_frac * rest as f64).round() as usize).min(rest);
    (rest - val, val, test)
}

/// Smallest N whose split sizes are all non-zero.
pub fn smallest_viable_n(test_frac: f64, val_frac: f64) -> usize {
    (3..)
        .find(|&n| {
            let (tr, v, te) = split_sizes(n, test_frac, val_frac);
            tr > 0 && v > 0 && te > 0
        })
        .expect("fractions in (0,1) always admit some N")
}

fn check_fractions(test_frac: f64, val_frac: f64) -> Result<(), DatasetError> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if ok(test_frac) && ok(val_frac) {
        Ok(())
    } else {
        Err(DatasetError::BadFraction { test_frac, val_frac })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub pro_ed: usize,
    pub not_pro_ed: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.pro_ed + self.not_pro_ed
    }

    fn add(&mut self, l: Label) {
        match l {
            Label::ProEd => self.pro_ed += 1,
            Label::NotProEd => self.not_pro_ed += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split_seed: u64,
    pub test_frac: f64,
    pub val_frac: f64,
    /// Sorted by asset id.
    pub examples: Vec<LabeledExample>,
    assignment: BTreeMap<String, Split>,
    pub class_counts: BTreeMap<Split, ClassCounts>,
    pub warnings: Vec<String>,
}

/// Seeded split. Examples are sorted by asset id before shuffling, so the
/// assignment depends only on the example set and the seed.
pub fn split(examples: &[LabeledExample], cfg: &SplitConfig) -> Result<DatasetManifest, DatasetError> {
    check_fractions(cfg.test_frac, cfg.val_frac)?;
    let n = examples.len();
    let (n_train, n_val, n_test) = split_sizes(n, cfg.test_frac, cfg.val_frac);
    if n < 3 || n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DatasetError::TooSmall { n, min_n: smallest_viable_n(cfg.test_frac, cfg.val_frac) });
    }
    let mut warnings = Vec::new();
    let first = examples[0].label;
    if examples.iter().all(|e| e.label == first) {
        if cfg.allow_single_class {
            warnings.push(format!("all {n} examples carry label {}", first.as_u8()));
        } else {
            return Err(DatasetError::SingleClass { n, label: first.as_u8() });
        }
    }

    let mut sorted: Vec<LabeledExample> = examples.to_vec();
    sorted.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);

    let mut assignment = BTreeMap::new();
    let mut class_counts: BTreeMap<Split, ClassCounts> = Split::ALL.iter().map(|s| (*s, ClassCounts::default())).collect();
    for (pos, &idx) in order.iter().enumerate() {
        let s = if pos < n_test {
            Split::Test
        } else if pos < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
        assignment.insert(sorted[idx].asset_id.clone(), s);
        class_counts.get_mut(&s).unwrap().add(sorted[idx].label);
    }
    Ok(DatasetManifest {
        split_seed: cfg.seed,
        test_frac: cfg.test_frac,
        val_frac: cfg.val_frac,
        examples: sorted,
        assignment,
        class_counts,
        warnings,
    })
}

impl DatasetManifest {
    pub fn split_of(&self, asset_id: &str) -> Option<Split> {
        self.assignment.get(asset_id).copied()
    }

    pub fn examples_in(&self, s: Split) -> Vec<&LabeledExample> {
        self.examples.iter().filter(|e| self.split_of(&e.asset_id) == Some(s)).collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Header comment block followed by `asset_id<TAB>label<TAB>split` lines.
    pub fn to_text(&self, config_digest: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(d) = config_digest {
            out.push_str(&digest_line(d));
        }
        out.push_str(&format!("# seed={}\n", self.split_seed));
        out.push_str(&format!("# test_frac={}\n", self.test_frac));
        out.push_str(&format!("# val_frac={}\n", self.val_frac));
        for s in Split::ALL {
            let c = self.class_counts[&s];
            out.push_str(&format!(
                "# count.{s}={} pro_ed={} not_pro_ed={}\n",
                c.total(),
                c.pro_ed,
                c.not_pro_ed
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("# warning={w}\n"));
        }
        for e in &self.examples {
            out.push_str(&format!("{}\t{}\t{}\n", e.asset_id, e.label.as_u8(), self.assignment[&e.asset_id]));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let mut seed = None;
        let mut test_frac = None;
        let mut val_frac = None;
        let mut warnings = Vec::new();
        let mut examples = Vec::new();
        let mut assignment = BTreeMap::new();
        let mut class_counts: BTreeMap<Split, ClassCounts> = Split::ALL.iter().map(|s| (*s, ClassCounts::default())).collect();
        for (i, line) in text.lines().enumerate() {
            let bad = |detail: String| DatasetError::BadManifest { line: i + 1, detail };
            if let Some(h) = line.strip_prefix("# ") {
                if let Some(v) = h.strip_prefix("seed=") {
                    seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?);
                } else if let Some(v) = h.strip_prefix("test_frac=") {
                    test_frac = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?);
                } else if let Some(v) = h.strip_prefix("val_frac=") {
                    val_frac = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?);
                } else if let Some(v) = h.strip_prefix("warning=") {
                    warnings.push(v.to_string());
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated columns, got {}", cols.len())));
            }
            let label = cols[1].parse::<u8>().map_err(|e| bad(e.to_string())).and_then(|v| Label::try_from(v).map_err(bad))?;
            let s: Split = cols[2].parse().map_err(bad)?;
            let source_class = match label {
                Label::ProEd => SourceClass::ProEd,
                Label::NotProEd => SourceClass::NotProEd,
            };
            examples.push(LabeledExample { asset_id: cols[0].to_string(), label, source_class });
            assignment.insert(cols[0].to_string(), s);
            class_counts.get_mut(&s).unwrap().add(label);
        }
        let missing = |k: &str| DatasetError::BadManifest { line: 0, detail: format!("missing header {k}") };
        Ok(Self {
            split_seed: seed.ok_or_else(|| missing("seed"))?,
            test_frac: test_frac.ok_or_else(|| missing("test_frac"))?,
            val_frac: val_frac.ok_or_else(|| missing("val_frac"))?,
            examples,
            assignment,
            class_counts,
            warnings,
        })
    }
}
