//! Confusion matrix and accuracy / precision / recall / F1.
//!
//! The positive class is Pro-ED, i.e. label **0**. A true positive is a Pro-ED
//! image predicted as Pro-ED; a false positive is a Not Pro-ED image predicted
//! as Pro-ED. Ratios with a zero denominator are `None`, never `0.0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledExample};
use crate::ingest::ImageLoader;
use crate::io::sha256_hex;
use crate::training::Predict;

pub const POSITIVE_LABEL: Label = Label::ProEd;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual == POSITIVE_LABEL, predicted == POSITIVE_LABEL) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut m = Self::default();
        for (a, p) in pairs {
            m.record(a, p);
        }
        m
    }

    pub fn merge(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.n())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; absent when either is absent or
    /// both are zero. Computed as `2tp / (2tp + fp + fn)`, which is the same
    /// quantity whenever it is defined.
    pub fn f1(&self) -> Option<f64> {
        self.precision()?;
        self.recall()?;
        if self.tp == 0 {
            return None;
        }
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub positive_class: u8,
    pub split_digest: String,
    pub checkpoint_id: String,
    pub excluded: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn from_matrix(m: &ConfusionMatrix, split_digest: &str, checkpoint_id: &str, excluded: u64) -> Self {
        let mut warnings = Vec::new();
        let mut get = |name: &str, v: Option<f64>| {
            if v.is_none() {
                warnings.push(format!("{name} undefined (zero denominator)"));
            }
            v
        };
        let accuracy = get("accuracy", m.accuracy());
        let precision = get("precision", m.precision());
        let recall = get("recall", m.recall());
        let f1 = get("f1", m.f1());
        Self {
            n: m.n(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
            accuracy,
            precision,
            recall,
            f1,
            positive_class: POSITIVE_LABEL.as_u8(),
            split_digest: split_digest.to_string(),
            checkpoint_id: checkpoint_id.to_string(),
            excluded,
            warnings,
        }
    }

    pub fn matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix::new(self.tp, self.fp, self.fn_, self.tn)
    }
}

/// Digest identifying a labeled split independently of example order.
pub fn split_digest(examples: &[&LabeledExample]) -> String {
    let mut rows: Vec<String> = examples.iter().map(|e| format!("{}\t{}\n", e.asset_id, e.label.as_u8())).collect();
    rows.sort();
    sha256_hex(rows.concat().as_bytes())
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("every image in the split failed to load ({0} excluded)")]
    NothingEvaluated(u64),
    #[error("reports cover different splits ({a} vs {b})")]
    SplitMismatch { a: String, b: String },
}

/// Classifies every example by argmax logit and tallies the matrix. Images
/// that fail to load are excluded and counted.
pub fn evaluate<P: Predict + Sync>(
    model: &P,
    checkpoint_id: &str,
    examples: &[&LabeledExample],
    loader: &dyn ImageLoader,
) -> Result<(ConfusionMatrix, EvalReport), EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let (matrix, excluded) = examples
        .par_iter()
        .map(|e| match loader.load(&e.asset_id) {
            Ok(img) => (ConfusionMatrix::from_pairs([(e.label, model.predict(&img))]), 0u64),
            Err(err) => {
                log::warn!("excluding {} from evaluation: {err}", e.asset_id);
                (ConfusionMatrix::default(), 1)
            }
        })
        .reduce(|| (ConfusionMatrix::default(), 0), |a, b| (a.0.merge(b.0), a.1 + b.1));
    if matrix.n() == 0 {
        return Err(EvalError::NothingEvaluated(excluded));
    }
    let report = EvalReport::from_matrix(&matrix, &split_digest(examples), checkpoint_id, excluded);
    Ok((matrix, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `a - b`
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub model_a: String,
    pub model_b: String,
    pub split_digest: String,
    pub rows: Vec<MetricRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("metric,a,b,delta\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.metric, cell(r.a), cell(r.b), cell(r.delta)));
        }
        out
    }
}

/// Side-by-side metrics over the same split.
pub fn compare_models(a: &EvalReport, b: &EvalReport) -> Result<ComparisonTable, EvalError> {
    if a.split_digest != b.split_digest {
        return Err(EvalError::SplitMismatch { a: a.split_digest.clone(), b: b.split_digest.clone() });
    }
    let row = |name: &str, x: Option<f64>, y: Option<f64>| MetricRow {
        metric: name.to_string(),
        a: x,
        b: y,
        delta: x.zip(y).map(|(x, y)| x - y),
    };
    Ok(ComparisonTable {
        model_a: a.checkpoint_id.clone(),
        model_b: b.checkpoint_id.clone(),
        split_digest: a.split_digest.clone(),
        rows: vec![
            row("accuracy", a.accuracy, b.accuracy),
            row("precision", a.precision, b.precision),
            row("recall", a.recall, b.recall),
            row("f1", a.f1, b.f1),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_example() {
        let m = ConfusionMatrix::new(3, 1, 2, 4);
        assert_eq!(m.precision(), Some(0.75));
        assert_eq!(m.recall(), Some(0.6));
        assert_eq!(m.accuracy(), Some(0.7));
        assert!((m.f1().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_pairs([
            (Label::ProEd, Label::ProEd),
            (Label::NotProEd, Label::NotProEd),
            (Label::ProEd, Label::ProEd),
        ]);
        assert_eq!(m.accuracy(), Some(1.0));
        assert_eq!(m.f1(), Some(1.0));
    }

    #[test]
    fn zero_denominators_absent() {
        let no_positive_predictions = ConfusionMatrix::new(0, 0, 3, 5);
        assert_eq!(no_positive_predictions.precision(), None);
        assert_eq!(no_positive_predictions.recall(), Some(0.0));
        assert_eq!(no_positive_predictions.f1(), None);
        let no_positives = ConfusionMatrix::new(0, 2, 0, 5);
        assert_eq!(no_positives.recall(), None);
        let r = EvalReport::from_matrix(&no_positive_predictions, "d", "c", 0);
        assert!(r.warnings.iter().any(|w| w.starts_with("precision")));
        assert_eq!(ConfusionMatrix::default().accuracy(), None);
    }

    #[test]
    fn report_serializes_fn_key() {
        let r = EvalReport::from_matrix(&ConfusionMatrix::new(1, 2, 3, 4), "s", "c", 0);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["fn"], 3);
        assert_eq!(v["positive_class"], 0);
        let absent = EvalReport::from_matrix(&ConfusionMatrix::new(0, 0, 1, 1), "s", "c", 0);
        assert!(serde_json::to_value(&absent).unwrap()["precision"].is_null());
    }

    fn report(acc: f64, p: f64, r: f64, f1: f64, digest: &str) -> EvalReport {
        EvalReport {
            n: 100,
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
            accuracy: Some(acc),
            precision: Some(p),
            recall: Some(r),
            f1: Some(f1),
            positive_class: 0,
            split_digest: digest.into(),
            checkpoint_id: "x".into(),
            excluded: 0,
            warnings: vec![],
        }
    }

    #[test]
    fn comparisons() {
        let a = report(0.8, 0.7, 0.9, 0.79, "s");
        let same = compare_models(&a, &a).unwrap();
        assert!(same.rows.iter().all(|r| r.delta == Some(0.0)));

        let better = report(0.9, 0.8, 0.95, 0.85, "s");
        let t = compare_models(&better, &a).unwrap();
        assert!(t.rows.iter().all(|r| r.delta.unwrap() > 0.0));

        let vit = report(0.867, 0.8, 0.96, 0.877, "s");
        let resnet = report(0.832, 0.78, 0.9, 0.837, "s");
        let t = compare_models(&vit, &resnet).unwrap();
        assert!((t.rows[0].delta.unwrap() - 0.035).abs() < 1e-12);
        assert!((t.rows[3].delta.unwrap() - 0.040).abs() < 1e-12);
        assert!(t.to_csv().starts_with("metric,a,b,delta\naccuracy,0.867,0.832,"));

        let other = report(0.8, 0.7, 0.9, 0.79, "t");
        assert!(matches!(compare_models(&a, &other), Err(EvalError::SplitMismatch { .. })));
    }
}
