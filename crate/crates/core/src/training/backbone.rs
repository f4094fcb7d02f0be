//! Frozen feature extractors and their descriptors.
//!
//! `toy_linear` reduces an image to its normalized mean RGB and has no
//! parameters. `resnet152` and `vit_b16` resolve a weights file from a
//! [`WeightStore`]; the bundled implementation is a fixed projection of the
//! pooled, normalized input grid (patch grid for ViT-B/16, stride-32 grid for
//! ResNet-152) to the architecture's penultimate feature width. Head input
//! dimensionality is always read from the loaded weight shapes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::io::{sha256_hex, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Resnet152,
    VitB16,
    ToyLinear,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Resnet152 => "resnet152",
            Architecture::VitB16 => "vit_b16",
            Architecture::ToyLinear => "toy_linear",
        }
    }

    /// Published penultimate feature width.
    pub fn feature_width(self) -> usize {
        match self {
            Architecture::Resnet152 => 2048,
            Architecture::VitB16 => 768,
            Architecture::ToyLinear => 3,
        }
    }

    /// Side of the pooled grid the frozen projection reads.
    fn pool_grid(self) -> u32 {
        match self {
            Architecture::Resnet152 => 7,
            Architecture::VitB16 => 14,
            Architecture::ToyLinear => 1,
        }
    }

    pub fn needs_pretrained_weights(self) -> bool {
        !matches!(self, Architecture::ToyLinear)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resnet152" => Ok(Architecture::Resnet152),
            "vit_b16" => Ok(Architecture::VitB16),
            "toy_linear" => Ok(Architecture::ToyLinear),
            other => Err(TrainError::UnknownArchitecture(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub input_side: u32,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBackendDescriptor {
    pub architecture: Architecture,
    pub pretrain_corpus: String,
    pub preprocessing: Preprocessing,
    pub num_classes: usize,
}

impl ModelBackendDescriptor {
    /// Model-card constants for each architecture.
    pub fn for_architecture(arch: Architecture) -> Self {
        let (corpus, preprocessing) = match arch {
            // torchvision ResNet-152 ImageNet-1k weights
            Architecture::Resnet152 => (
                "imagenet-1k",
                Preprocessing { input_side: 224, mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] },
            ),
            // ViT-B/16, 224px, ImageNet-1k fine-tuned checkpoint
            Architecture::VitB16 => {
                ("imagenet-1k", Preprocessing { input_side: 224, mean: [0.5; 3], std: [0.5; 3] })
            }
            Architecture::ToyLinear => ("none", Preprocessing { input_side: 32, mean: [0.5; 3], std: [0.25; 3] }),
        };
        Self { architecture: arch, pretrain_corpus: corpus.to_string(), preprocessing, num_classes: 2 }
    }
}

/// Channel-major normalized tensor of shape 3 x side x side.
pub fn preprocess(img: &RgbImage, p: &Preprocessing) -> Vec<f64> {
    let side = p.input_side;
    let resized;
    let src = if img.width() == side && img.height() == side {
        img
    } else {
        resized = imageops::resize(img, side, side, FilterType::Triangle);
        &resized
    };
    let plane = (side * side) as usize;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in src.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (f64::from(px[c]) / 255.0 - p.mean[c]) / p.std[c];
        }
    }
    out
}

/// Average-pools each channel plane into a `grid x grid` lattice.
fn pool(tensor: &[f64], side: u32, grid: u32) -> Vec<f64> {
    let side = side as usize;
    let grid = grid as usize;
    let plane = side * side;
    let mut out = Vec::with_capacity(3 * grid * grid);
    for c in 0..3 {
        for gy in 0..grid {
            let (y0, y1) = (gy * side / grid, (gy + 1) * side / grid);
            for gx in 0..grid {
                let (x0, x1) = (gx * side / grid, (gx + 1) * side / grid);
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += tensor[c * plane + y * side + x];
                    }
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

/// A frozen feature extractor.
pub trait Backbone: Send + Sync {
    fn descriptor(&self) -> &ModelBackendDescriptor;
    fn feature_dim(&self) -> usize;
    /// Every frozen parameter, in a fixed order.
    fn frozen_parameters(&self) -> &[f32];
    /// Stable identifier of the frozen weights.
    fn backbone_id(&self) -> String;
    fn features(&self, img: &RgbImage) -> Vec<f64>;
}

/// Mean normalized RGB; no parameters.
pub struct ToyLinearBackbone {
    descriptor: ModelBackendDescriptor,
}

impl Default for ToyLinearBackbone {
    fn default() -> Self {
        Self { descriptor: ModelBackendDescriptor::for_architecture(Architecture::ToyLinear) }
    }
}

impl Backbone for ToyLinearBackbone {
    fn descriptor(&self) -> &ModelBackendDescriptor {
        &self.descriptor
    }

    fn feature_dim(&self) -> usize {
        3
    }

    fn frozen_parameters(&self) -> &[f32] {
        &[]
    }

    fn backbone_id(&self) -> String {
        "toy_linear".to_string()
    }

    fn features(&self, img: &RgbImage) -> Vec<f64> {
        let p = &self.descriptor.preprocessing;
        pool(&preprocess(img, p), p.input_side, 1)
    }
}

const WEIGHTS_MAGIC: &[u8; 5] = b"PEDW\x01";

/// Frozen projection weights: `features = tanh(W * pooled + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeights {
    pub architecture: Architecture,
    pub grid: u32,
    pub in_dim: usize,
    pub feature_dim: usize,
    /// `[weights (feature_dim x in_dim, row-major) | bias (feature_dim)]`
    pub params: Vec<f32>,
}

impl FrozenWeights {
    /// Seeded stand-in with the architecture's published shapes.
    pub fn seeded(arch: Architecture, seed: u64) -> Self {
        let grid = arch.pool_grid();
        let in_dim = (3 * grid * grid) as usize;
        let feature_dim = arch.feature_width();
        let bound = 1.0 / (in_dim as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..feature_dim * in_dim + feature_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self { architecture: arch, grid, in_dim, feature_dim, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let name = self.architecture.as_str().as_bytes();
        let mut out = Vec::with_capacity(32 + self.params.len() * 4);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(name.len() as u8);
        out.extend_from_slice(name);
        for v in [self.grid, self.in_dim as u32, self.feature_dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let rest = bytes.strip_prefix(WEIGHTS_MAGIC.as_slice()).ok_or("bad magic")?;
        let (&len, rest) = rest.split_first().ok_or("truncated header")?;
        let len = len as usize;
        if rest.len() < len + 12 {
            return Err("truncated header".into());
        }
        let arch: Architecture = std::str::from_utf8(&rest[..len])
            .map_err(|e| e.to_string())?
            .parse()
            .map_err(|e: TrainError| e.to_string())?;
        let u32_at = |o: usize| u32::from_le_bytes(rest[len + o..len + o + 4].try_into().unwrap());
        let (grid, in_dim, feature_dim) = (u32_at(0), u32_at(4) as usize, u32_at(8) as usize);
        if in_dim != (3 * grid * grid) as usize {
            return Err(format!("in_dim {in_dim} does not match grid {grid}"));
        }
        let body = &rest[len + 12..];
        let expect = (feature_dim * in_dim + feature_dim) * 4;
        if body.len() != expect {
            return Err(format!("expected {expect} parameter bytes, found {}", body.len()));
        }
        let params = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { architecture: arch, grid, in_dim, feature_dim, params })
    }
}

pub struct ProjectionBackbone {
    descriptor: ModelBackendDescriptor,
    weights: FrozenWeights,
    id: String,
}

impl ProjectionBackbone {
    pub fn new(weights: FrozenWeights) -> Self {
        let id = sha256_hex(&weights.to_bytes());
        Self { descriptor: ModelBackendDescriptor::for_architecture(weights.architecture), weights, id }
    }
}

impl Backbone for ProjectionBackbone {
    fn descriptor(&self) -> &ModelBackendDescriptor {
        &self.descriptor
    }

    fn feature_dim(&self) -> usize {
        self.weights.feature_dim
    }

    fn frozen_parameters(&self) -> &[f32] {
        &self.weights.params
    }

    fn backbone_id(&self) -> String {
        self.id.clone()
    }

    fn features(&self, img: &RgbImage) -> Vec<f64> {
        let p = &self.descriptor.preprocessing;
        let pooled = pool(&preprocess(img, p), p.input_side, self.weights.grid);
        let w = &self.weights;
        let (mat, bias) = w.params.split_at(w.feature_dim * w.in_dim);
        mat.chunks_exact(w.in_dim)
            .zip(bias)
            .map(|(row, b)| {
                let s: f64 = row.iter().zip(&pooled).map(|(a, x)| f64::from(*a) * x).sum();
                (s + f64::from(*b)).tanh()
            })
            .collect()
    }
}

/// Directory holding `<arch>.pedw` weight files.
#[derive(Debug, Clone)]
pub struct WeightStore {
    dir: PathBuf,
}

impl WeightStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, arch: Architecture) -> PathBuf {
        self.dir.join(format!("{}.pedw", arch.as_str()))
    }

    pub fn resolve(&self, arch: Architecture) -> Result<FrozenWeights, TrainError> {
        let path = self.path_for(arch);
        let bytes = fs::read(&path).map_err(|_| TrainError::MissingWeights { arch, path: path.clone() })?;
        let w = FrozenWeights::from_bytes(&bytes).map_err(|detail| TrainError::BadWeights { path: path.clone(), detail })?;
        if w.architecture != arch {
            return Err(TrainError::BadWeights { path, detail: format!("file holds {} weights", w.architecture) });
        }
        Ok(w)
    }

    /// Writes seeded stand-in weights unless a file already exists.
    pub fn ensure_seeded(&self, arch: Architecture, seed: u64) -> Result<PathBuf, TrainError> {
        let path = self.path_for(arch);
        if !path.exists() {
            write_atomic(&path, &FrozenWeights::seeded(arch, seed).to_bytes())
                .map_err(|e| TrainError::Io { path: path.clone(), source: e })?;
        }
        Ok(path)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Builds the frozen backbone for `descriptor`.
pub fn load_backbone(arch: Architecture, weights: Option<&WeightStore>) -> Result<Box<dyn Backbone>, TrainError> {
    match arch {
        Architecture::ToyLinear => Ok(Box::new(ToyLinearBackbone::default())),
        a => {
            let store = weights.ok_or(TrainError::MissingWeights { arch: a, path: PathBuf::from(format!("{a}.pedw")) })?;
            Ok(Box::new(ProjectionBackbone::new(store.resolve(a)?)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_features_are_mean_rgb() {
        let img = RgbImage::from_pixel(5, 7, image::Rgb([255, 0, 51]));
        let f = ToyLinearBackbone::default().features(&img);
        assert_eq!(f.len(), 3);
        assert!((f[0] - 2.0).abs() < 1e-12 && (f[1] + 2.0).abs() < 1e-12 && (f[2] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn weights_round_trip_and_shapes() {
        let w = FrozenWeights::seeded(Architecture::VitB16, 3);
        assert_eq!(w.in_dim, 588);
        assert_eq!(w.feature_dim, 768);
        let back = FrozenWeights::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        assert!(FrozenWeights::from_bytes(b"nope").is_err());
        let mut truncated = w.to_bytes();
        truncated.pop();
        assert!(FrozenWeights::from_bytes(&truncated).is_err());
    }

    #[test]
    fn missing_weights_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        let err = store.resolve(Architecture::Resnet152).unwrap_err();
        assert!(matches!(err, TrainError::MissingWeights { arch: Architecture::Resnet152, .. }));
        assert!(err.to_string().contains("resnet152.pedw"));
        store.ensure_seeded(Architecture::Resnet152, 1).unwrap();
        assert_eq!(store.resolve(Architecture::Resnet152).unwrap().feature_dim, 2048);
    }

    #[test]
    fn unknown_architecture() {
        assert!(matches!("vgg16".parse::<Architecture>(), Err(TrainError::UnknownArchitecture(_))));
    }

    #[test]
    fn descriptors_follow_model_cards() {
        let r = ModelBackendDescriptor::for_architecture(Architecture::Resnet152);
        assert_eq!(r.pretrain_corpus, "imagenet-1k");
        assert_eq!(r.preprocessing.input_side, 224);
        assert_eq!(r.preprocessing.mean, [0.485, 0.456, 0.406]);
        let v = ModelBackendDescriptor::for_architecture(Architecture::VitB16);
        assert_eq!(v.preprocessing.std, [0.5; 3]);
        assert_eq!(v.num_classes, 2);
    }
}
