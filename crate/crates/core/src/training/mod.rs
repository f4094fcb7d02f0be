//! Frozen-backbone fine-tuning.
//!
//! Only a freshly initialised two-logit linear head is trained; the backbone
//! is held behind a shared reference and never receives updates. Each epoch
//! reshuffles the training set from a seed derived from the run seed and the
//! epoch number, trains with SGD + momentum on cross-entropy, then records
//! train/validation error and writes a head checkpoint.

mod backbone;
mod head;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backbone::{
    load_backbone, preprocess, Architecture, Backbone, FrozenWeights, ModelBackendDescriptor, Preprocessing,
    ProjectionBackbone, ToyLinearBackbone, WeightStore,
};
pub use head::{HeadGradient, LinearHead, SgdMomentum};

use crate::dataset::{Label, LabeledExample};
use crate::ingest::ImageLoader;
use crate::io::write_atomic;
use crate::sampling::splitmix64;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("unknown architecture {0:?} (expected resnet152, vit_b16 or toy_linear)")]
    UnknownArchitecture(String),
    #[error(
        "pretrained weights for {arch} not found at {path}; place a weights file there, \
         or rerun `train` with --stub-weights to generate a seeded frozen extractor with the published shapes"
    )]
    MissingWeights { arch: Architecture, path: PathBuf },
    #[error("weights file {path} is invalid: {detail}")]
    BadWeights { path: PathBuf, detail: String },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("no usable training images (every image failed to load)")]
    EmptyBatch,
    #[error("validation split has no usable images")]
    EmptyValidation,
    #[error("{metrics} metric records but {checkpoints} checkpoints")]
    LengthMismatch { metrics: usize, checkpoints: usize },
    #[error("no epochs to select from")]
    NoEpochs,
    #[error("checkpoint {path}: {detail}")]
    BadCheckpoint { path: PathBuf, detail: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            seed: 0,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            optimizer_id: "sgd_momentum".to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig("momentum must lie in [0, 1)".into()));
        }
        if self.optimizer_id != "sgd_momentum" {
            return Err(TrainError::BadConfig(format!("unsupported optimizer {:?}", self.optimizer_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCensus {
    pub frozen_count: usize,
    pub trainable_count: usize,
}

/// Frozen backbone plus trainable head.
pub struct TrainableModel {
    backbone: Box<dyn Backbone>,
    pub head: LinearHead,
}

/// Builds the frozen backbone and a seeded head of matching width.
pub fn prepare_backbone(
    descriptor: &ModelBackendDescriptor,
    weights: Option<&WeightStore>,
    head_seed: u64,
) -> Result<TrainableModel, TrainError> {
    let backbone = load_backbone(descriptor.architecture, weights)?;
    let head = LinearHead::init(backbone.feature_dim(), head_seed);
    Ok(TrainableModel { backbone, head })
}

impl TrainableModel {
    pub fn new(backbone: Box<dyn Backbone>, head: LinearHead) -> Self {
        Self { backbone, head }
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn census(&self) -> ParameterCensus {
        ParameterCensus {
            frozen_count: self.backbone.frozen_parameters().len(),
            trainable_count: self.head.parameter_count(),
        }
    }

    pub fn features(&self, img: &RgbImage) -> Vec<f64> {
        self.backbone.features(img)
    }

    /// One optimizer step on a batch of images; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[(RgbImage, Label)], opt: &mut SgdMomentum) -> f64 {
        let feats: Vec<(Vec<f64>, Label)> = batch.iter().map(|(img, l)| (self.backbone.features(img), *l)).collect();
        let refs: Vec<(&[f64], Label)> = feats.iter().map(|(f, l)| (f.as_slice(), *l)).collect();
        let (loss, g) = self.head.loss_and_grad(&refs);
        opt.step(&mut self.head, &g);
        loss
    }

    pub fn into_classifier(self) -> Classifier {
        Classifier { backbone: self.backbone, head: self.head }
    }
}

/// Two-class prediction from an image.
pub trait Predict {
    fn logits(&self, img: &RgbImage) -> [f64; 2];

    /// Argmax; ties go to label 0.
    fn predict(&self, img: &RgbImage) -> Label {
        let z = self.logits(img);
        if z[1] > z[0] {
            Label::NotProEd
        } else {
            Label::ProEd
        }
    }
}

pub struct Classifier {
    backbone: Box<dyn Backbone>,
    head: LinearHead,
}

impl Classifier {
    pub fn new(backbone: Box<dyn Backbone>, head: LinearHead) -> Self {
        Self { backbone, head }
    }

    /// Loads a head checkpoint and the frozen backbone it was trained on.
    pub fn load(checkpoint: &Path, weights: Option<&WeightStore>) -> Result<Self, TrainError> {
        let ck = HeadCheckpoint::read(checkpoint)?;
        let backbone = load_backbone(ck.architecture, weights)?;
        if backbone.backbone_id() != ck.backbone_id {
            return Err(TrainError::BadCheckpoint {
                path: checkpoint.to_path_buf(),
                detail: format!("trained on backbone {} but {} was resolved", ck.backbone_id, backbone.backbone_id()),
            });
        }
        if backbone.feature_dim() != ck.head.feature_dim {
            return Err(TrainError::BadCheckpoint { path: checkpoint.to_path_buf(), detail: "feature width mismatch".into() });
        }
        Ok(Self { backbone, head: ck.head })
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }
}

impl Predict for Classifier {
    fn logits(&self, img: &RgbImage) -> [f64; 2] {
        self.head.logits(&self.backbone.features(img))
    }
}

/// Per-epoch curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_error: f64,
    /// Always `1 - val_error`.
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub epoch: usize,
    pub path: PathBuf,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCheckpoint {
    pub architecture: Architecture,
    pub backbone_id: String,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub head: LinearHead,
}

impl HeadCheckpoint {
    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| TrainError::BadCheckpoint { path: path.to_path_buf(), detail: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serialization") + "\n";
        write_atomic(path, text.as_bytes()).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub asset_id: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub checkpoints: Vec<CheckpointRef>,
    pub skipped: Vec<SkippedImage>,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch}")
}

fn error_rate(head: &LinearHead, data: &[(Vec<f64>, Label)]) -> f64 {
    let wrong = data.iter().filter(|(x, y)| head.predict(x) != *y).count();
    wrong as f64 / data.len() as f64
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    splitmix64(seed ^ splitmix64(epoch as u64))
}

/// Head initialisation seed derived from the run seed.
pub fn head_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x6865_6164)
}

/// Trains a head on precomputed features. `on_epoch` persists each epoch's
/// head and returns its checkpoint reference.
pub fn train_on_features<F>(
    head: &mut LinearHead,
    train: &[(Vec<f64>, Label)],
    val: &[(Vec<f64>, Label)],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Vec<EpochMetrics>, Vec<CheckpointRef>), TrainError>
where
    F: FnMut(&LinearHead, &EpochMetrics) -> Result<CheckpointRef, TrainError>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if val.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let mut opt = SgdMomentum::new(config.learning_rate, config.momentum, head.feature_dim);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch)));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], Label)> = chunk.iter().map(|&i| (train[i].0.as_slice(), train[i].1)).collect();
            let (loss, g) = head.loss_and_grad(&batch);
            loss_sum += loss * batch.len() as f64;
            opt.step(head, &g);
        }
        let val_error = error_rate(head, val);
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_error: error_rate(head, train),
            val_error,
            val_accuracy: 1.0 - val_error,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        checkpoints.push(on_epoch(head, &m)?);
        metrics.push(m);
    }
    Ok((metrics, checkpoints))
}

/// Extracts features for `examples`; failures are collected, not fatal.
pub fn extract_features(
    backbone: &dyn Backbone,
    examples: &[&LabeledExample],
    loader: &dyn ImageLoader,
) -> (Vec<(Vec<f64>, Label)>, Vec<SkippedImage>) {
    let results: Vec<_> = examples
        .par_iter()
        .map(|e| loader.load(&e.asset_id).map(|img| (backbone.features(&img), e.label)))
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (e, r) in examples.iter().zip(results) {
        match r {
            Ok(f) => ok.push(f),
            Err(err) => skipped.push(SkippedImage { asset_id: e.asset_id.clone(), detail: err.to_string() }),
        }
    }
    (ok, skipped)
}

/// Fine-tunes the head of `model`, writing `checkpoint_dir/epoch_<k>` for
/// every epoch. Images that fail to load are skipped and reported.
pub fn fine_tune(
    model: &mut TrainableModel,
    train: &[&LabeledExample],
    val: &[&LabeledExample],
    loader: &dyn ImageLoader,
    config: &TrainConfig,
    checkpoint_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (train_feats, mut skipped) = extract_features(model.backbone.as_ref(), train, loader);
    let (val_feats, skipped_val) = extract_features(model.backbone.as_ref(), val, loader);
    skipped.extend(skipped_val);
    fs::create_dir_all(checkpoint_dir).map_err(|source| TrainError::Io { path: checkpoint_dir.to_path_buf(), source })?;
    let arch = model.backbone.descriptor().architecture;
    let backbone_id = model.backbone.backbone_id();
    let (metrics, checkpoints) = train_on_features(&mut model.head, &train_feats, &val_feats, config, |head, m| {
        let path = checkpoint_dir.join(checkpoint_file_name(m.epoch));
        HeadCheckpoint {
            architecture: arch,
            backbone_id: backbone_id.clone(),
            epoch: m.epoch,
            val_accuracy: m.val_accuracy,
            head: head.clone(),
        }
        .write(&path)?;
        Ok(CheckpointRef { epoch: m.epoch, path, val_accuracy: m.val_accuracy })
    })?;
    Ok(TrainOutcome { metrics, checkpoints, skipped })
}

/// Checkpoint with the highest validation accuracy; earliest epoch on ties.
pub fn select_best(metrics: &[EpochMetrics], checkpoints: &[CheckpointRef]) -> Result<CheckpointRef, TrainError> {
    if metrics.len() != checkpoints.len() {
        return Err(TrainError::LengthMismatch { metrics: metrics.len(), checkpoints: checkpoints.len() });
    }
    let mut best: Option<&EpochMetrics> = None;
    for m in metrics {
        if best.is_none_or(|b| m.val_accuracy > b.val_accuracy) {
            best = Some(m);
        }
    }
    let best = best.ok_or(TrainError::NoEpochs)?;
    checkpoints
        .iter()
        .find(|c| c.epoch == best.epoch)
        .cloned()
        .ok_or(TrainError::LengthMismatch { metrics: metrics.len(), checkpoints: checkpoints.len() })
}

/// `epoch,train_error,val_error` with LF line endings.
pub fn export_curves(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_error,val_error\n");
    for m in metrics {
        out.push_str(&format!("{},{},{}\n", m.epoch, m.train_error, m.val_error));
    }
    out
}

/// Deterministic per-epoch metrics (no wall-clock column).
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,train_error,val_error,val_accuracy\n");
    for m in metrics {
        out.push_str(&format!("{},{},{},{},{}\n", m.epoch, m.train_loss, m.train_error, m.val_error, m.val_accuracy));
    }
    out
}

pub fn timing_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,wall_seconds\n");
    for m in metrics {
        out.push_str(&format!("{},{}\n", m.epoch, m.wall_seconds));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(epoch: usize, acc: f64) -> EpochMetrics {
        EpochMetrics { epoch, train_loss: 0.0, train_error: 0.0, val_error: 1.0 - acc, val_accuracy: acc, wall_seconds: 0.0 }
    }

    fn refs(metrics: &[EpochMetrics]) -> Vec<CheckpointRef> {
        metrics
            .iter()
            .map(|m| CheckpointRef { epoch: m.epoch, path: PathBuf::from(checkpoint_file_name(m.epoch)), val_accuracy: m.val_accuracy })
            .collect()
    }

    #[test]
    fn best_epoch_rules() {
        let ms = vec![m(1, 0.80), m(2, 0.85), m(3, 0.83)];
        assert_eq!(select_best(&ms, &refs(&ms)).unwrap().epoch, 2);
        let ties = vec![m(1, 0.85), m(2, 0.85)];
        assert_eq!(select_best(&ties, &refs(&ties)).unwrap().epoch, 1);
        let one = vec![m(1, 0.5)];
        assert_eq!(select_best(&one, &refs(&one)).unwrap().epoch, 1);
        assert!(matches!(select_best(&ms, &refs(&ms)[..2]), Err(TrainError::LengthMismatch { .. })));
        assert!(matches!(select_best(&[], &[]), Err(TrainError::NoEpochs)));
    }

    #[test]
    fn curves_shape() {
        let ms: Vec<_> = (1..=20).map(|e| m(e, 1.0)).collect();
        let csv = export_curves(&ms);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "epoch,train_error,val_error");
        assert_eq!(lines[1], "1,0,0");
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
    }

    #[test]
    fn curves_golden() {
        let ms = vec![
            EpochMetrics { epoch: 1, train_loss: 0.7, train_error: 0.375, val_error: 0.5, val_accuracy: 0.5, wall_seconds: 1.0 },
            EpochMetrics { epoch: 2, train_loss: 0.4, train_error: 0.125, val_error: 0.25, val_accuracy: 0.75, wall_seconds: 2.0 },
            EpochMetrics { epoch: 3, train_loss: 0.3, train_error: 0.1, val_error: 0.2, val_accuracy: 0.8, wall_seconds: 3.0 },
        ];
        assert_eq!(export_curves(&ms), include_str!("../../tests/data/curves_golden.csv"));
    }

    #[test]
    fn accuracy_plus_error_is_exactly_one() {
        for n in 1..=500usize {
            for wrong in 0..=n {
                let e = wrong as f64 / n as f64;
                assert_eq!((1.0 - e) + e, 1.0, "n={n} wrong={wrong}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { optimizer_id: "adam".into(), ..Default::default() }.validate().is_err());
    }
}
