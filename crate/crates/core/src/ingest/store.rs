//! Content-addressed image store and the image fetcher.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/<first two hex of asset_id>/<asset_id>.<ext>
//! <root>/assets.jsonl        one ImageAsset per line
//! ```
//!
//! An asset is one (tweet, url) link. Links that point at identical bytes share
//! an `asset_id` and therefore a single file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::ImageLink;
use super::taxonomy::{HashtagTaxonomy, SourceClass};
use crate::io::{data_lines, digest_line, sha256_hex, write_atomic};

pub const INDEX_FILE: &str = "assets.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Pending,
    Fetched,
    Failed,
    SkippedNonImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAsset {
    /// SHA-256 of the fetched bytes. Assets that were never fetched carry
    /// `url-<sha256 of the url>` instead.
    pub asset_id: String,
    pub source_url: String,
    pub tweet_id: String,
    pub posted_at: DateTime<Utc>,
    pub hashtags: Vec<String>,
    pub fetch_status: FetchStatus,
    /// Relative to the store root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_path: Option<String>,
    pub source_class: SourceClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ImageAsset {
    pub fn key(&self) -> (String, String) {
        (self.tweet_id.clone(), self.source_url.clone())
    }

    pub fn is_fetched(&self) -> bool {
        self.fetch_status == FetchStatus::Fetched
    }
}

fn url_asset_id(url: &str) -> String {
    format!("url-{}", sha256_hex(url.as_bytes()))
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("image store {path} is not writable: {source}")]
    NotWritable { path: PathBuf, source: std::io::Error },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: bad asset record: {detail}")]
    BadIndex { path: PathBuf, line: usize, detail: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ImageLoadError {
    #[error("asset {0} has no fetched bytes")]
    NotFetched(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("decoding {path}: {source}")]
    Decode { path: PathBuf, source: image::ImageError },
}

/// Loads decoded images by asset id.
pub trait ImageLoader: Sync {
    fn load(&self, asset_id: &str) -> Result<RgbImage, ImageLoadError>;
}

/// Result of one network or file retrieval.
#[derive(Debug, Clone)]
pub struct FetchedBody {
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum FetchError {
    #[error("http status {0}")]
    Status(u16),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unsupported url: {0}")]
    Unsupported(String),
}

impl FetchError {
    fn retryable(&self) -> bool {
        match self {
            FetchError::Status(s) => *s >= 500 || *s == 429,
            FetchError::Transport(_) => true,
            FetchError::Unsupported(_) => false,
        }
    }
}

/// Retrieves the body behind an image URL.
pub trait Fetcher: Sync {
    fn fetch(&self, url: &str) -> Result<FetchedBody, FetchError>;
}

/// Handles `http`, `https` and `file` URLs.
pub struct DefaultFetcher {
    agent: ureq::Agent,
}

const MAX_BODY_BYTES: u64 = 64 << 20;

impl DefaultFetcher {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self { agent: config.into() }
    }
}

impl Fetcher for DefaultFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedBody, FetchError> {
        let parsed = url::Url::parse(url).map_err(|e| FetchError::Unsupported(format!("{url}: {e}")))?;
        match parsed.scheme() {
            "file" => {
                let path = parsed
                    .to_file_path()
                    .map_err(|_| FetchError::Unsupported(url.to_string()))?;
                let bytes = fs::read(&path).map_err(|e| FetchError::Transport(format!("{}: {e}", path.display())))?;
                Ok(FetchedBody { content_type: None, bytes })
            }
            "http" | "https" => {
                let mut resp = self
                    .agent
                    .get(url)
                    .call()
                    .map_err(|e| FetchError::Transport(e.to_string()))?;
                let status = resp.status().as_u16();
                if !(200..300).contains(&status) {
                    return Err(FetchError::Status(status));
                }
                let content_type = resp
                    .headers()
                    .get("content-type")
                    .and_then(|v| v.to_str().ok())
                    .map(str::to_string);
                let bytes = resp
                    .body_mut()
                    .with_config()
                    .limit(MAX_BODY_BYTES)
                    .read_to_vec()
                    .map_err(|e| FetchError::Transport(e.to_string()))?;
                Ok(FetchedBody { content_type, bytes })
            }
            other => Err(FetchError::Unsupported(format!("scheme {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchPolicy {
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_parallel: usize,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(30), max_retries: 2, max_parallel: 8 }
    }
}

/// Counts for links processed by one `fetch_images` call. Links already
/// present in the store are counted in `already_present` only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchReport {
    pub fetched: usize,
    pub failed: usize,
    pub skipped_non_image: usize,
    pub already_present: usize,
}

enum UrlOutcome {
    Fetched { asset_id: String, rel_path: String },
    Failed(String),
    Skipped(String),
}

/// Decides whether a body is an image we keep. Animated GIFs count when the
/// first frame decodes.
fn image_format_of(body: &FetchedBody) -> Result<ImageFormat, String> {
    if let Some(ct) = &body.content_type {
        let mime = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
        if !mime.starts_with("image/") {
            return Err(format!("content type {mime}"));
        }
    }
    let format = image::guess_format(&body.bytes).map_err(|_| "unrecognized image bytes".to_string())?;
    if format == ImageFormat::Gif {
        image::load_from_memory_with_format(&body.bytes, format)
            .map_err(|e| format!("gif without decodable first frame: {e}"))?;
    }
    Ok(format)
}

pub struct AssetStore {
    root: PathBuf,
    assets: BTreeMap<(String, String), ImageAsset>,
}

impl AssetStore {
    /// Opens (or creates) a store, loading its index when present.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let index = root.join(INDEX_FILE);
        let mut assets = BTreeMap::new();
        if index.exists() {
            let text = fs::read_to_string(&index).map_err(|source| StoreError::Io { path: index.clone(), source })?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let a: ImageAsset = serde_json::from_str(line).map_err(|e| StoreError::BadIndex {
                    path: index.clone(),
                    line: i + 1,
                    detail: e.to_string(),
                })?;
                assets.insert(a.key(), a);
            }
        }
        Ok(Self { root, assets })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Assets in (tweet_id, url) order.
    pub fn assets(&self) -> impl Iterator<Item = &ImageAsset> {
        self.assets.values()
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn bytes_path(&self, asset: &ImageAsset) -> Option<PathBuf> {
        asset.byte_path.as_ref().map(|p| self.root.join(p))
    }

    fn has_bytes(&self, asset: &ImageAsset) -> bool {
        asset.is_fetched()
            && self
                .bytes_path(asset)
                .and_then(|p| fs::metadata(p).ok())
                .is_some_and(|m| m.is_file() && m.len() > 0)
    }

    fn ensure_writable(&self) -> Result<(), StoreError> {
        let not_writable = |source| StoreError::NotWritable { path: self.root.clone(), source };
        fs::create_dir_all(&self.root).map_err(not_writable)?;
        tempfile::tempfile_in(&self.root).map_err(not_writable)?;
        Ok(())
    }

    fn write_bytes(&self, body: &FetchedBody, format: ImageFormat) -> Result<(String, String), StoreError> {
        let asset_id = sha256_hex(&body.bytes);
        let ext = format.extensions_str().first().copied().unwrap_or("img");
        let rel = format!("{}/{}.{}", &asset_id[..2], asset_id, ext);
        let path = self.root.join(&rel);
        let present = fs::metadata(&path).is_ok_and(|m| m.len() == body.bytes.len() as u64);
        if !present {
            write_atomic(&path, &body.bytes).map_err(|source| StoreError::Io { path: path.clone(), source })?;
        }
        Ok((asset_id, rel))
    }

    fn fetch_url(&self, url: &str, policy: &FetchPolicy, fetcher: &dyn Fetcher) -> Result<UrlOutcome, StoreError> {
        let mut attempt = 0;
        let body = loop {
            match fetcher.fetch(url) {
                Ok(b) => break b,
                Err(e) if e.retryable() && attempt < policy.max_retries => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(25 * u64::from(attempt)));
                }
                Err(e) => return Ok(UrlOutcome::Failed(format!("{e} after {} attempt(s)", attempt + 1))),
            }
        };
        match image_format_of(&body) {
            Ok(format) => {
                let (asset_id, rel_path) = self.write_bytes(&body, format)?;
                Ok(UrlOutcome::Fetched { asset_id, rel_path })
            }
            Err(reason) => Ok(UrlOutcome::Skipped(reason)),
        }
    }

    /// Fetches every link not already stored and updates the index in memory.
    ///
    /// Source classes of all assets are recomputed from `taxonomy`. The index
    /// is not written; call [`AssetStore::save_index`].
    pub fn fetch_images(
        &mut self,
        links: &[ImageLink],
        taxonomy: &HashtagTaxonomy,
        policy: &FetchPolicy,
        fetcher: &dyn Fetcher,
    ) -> Result<FetchReport, StoreError> {
        self.ensure_writable()?;
        let mut report = FetchReport::default();

        let mut todo: Vec<&ImageLink> = Vec::new();
        for link in links {
            let key = (link.tweet_id.clone(), link.url.clone());
            match self.assets.get(&key) {
                Some(a) if self.has_bytes(a) => report.already_present += 1,
                _ => todo.push(link),
            }
        }

        let mut urls: Vec<&str> = todo.iter().map(|l| l.url.as_str()).collect();
        urls.sort_unstable();
        urls.dedup();

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(policy.max_parallel.max(1))
            .build()
            .expect("thread pool");
        let outcomes: Vec<Result<UrlOutcome, StoreError>> =
            pool.install(|| urls.par_iter().map(|u| self.fetch_url(u, policy, fetcher)).collect());
        let mut by_url: HashMap<&str, UrlOutcome> = HashMap::with_capacity(urls.len());
        for (u, o) in urls.iter().zip(outcomes) {
            by_url.insert(u, o?);
        }

        for link in todo {
            let (asset_id, status, byte_path, detail) = match &by_url[link.url.as_str()] {
                UrlOutcome::Fetched { asset_id, rel_path } => {
                    report.fetched += 1;
                    (asset_id.clone(), FetchStatus::Fetched, Some(rel_path.clone()), None)
                }
                UrlOutcome::Failed(why) => {
                    report.failed += 1;
                    (url_asset_id(&link.url), FetchStatus::Failed, None, Some(why.clone()))
                }
                UrlOutcome::Skipped(why) => {
                    report.skipped_non_image += 1;
                    (url_asset_id(&link.url), FetchStatus::SkippedNonImage, None, Some(why.clone()))
                }
            };
            let asset = ImageAsset {
                asset_id,
                source_url: link.url.clone(),
                tweet_id: link.tweet_id.clone(),
                posted_at: link.posted_at,
                hashtags: link.hashtags.clone(),
                fetch_status: status,
                byte_path,
                source_class: SourceClass::Unlabeled,
                detail,
            };
            self.assets.insert(asset.key(), asset);
        }

        for a in self.assets.values_mut() {
            a.source_class = taxonomy.assign_source_class(&a.hashtags);
        }
        Ok(report)
    }

    /// Serialized index, one asset per line, with an optional provenance line.
    pub fn index_text(&self, config_digest: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(d) = config_digest {
            out.push_str(&digest_line(d));
        }
        for a in self.assets.values() {
            out.push_str(&serde_json::to_string(a).expect("asset serialization"));
            out.push('\n');
        }
        out
    }

    pub fn save_index(&self, config_digest: Option<&str>) -> Result<(), StoreError> {
        let path = self.root.join(INDEX_FILE);
        let text = self.index_text(config_digest);
        if fs::read_to_string(&path).is_ok_and(|old| old == text) {
            return Ok(());
        }
        write_atomic(&path, text.as_bytes()).map_err(|source| StoreError::Io { path, source })
    }

    /// Status counts over the whole index.
    pub fn status_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for a in self.assets.values() {
            let k = serde_json::to_value(a.fetch_status).unwrap().as_str().unwrap().to_string();
            *m.entry(k).or_insert(0) += 1;
        }
        m
    }
}

/// Loads assets from a JSON-lines file (comment lines skipped).
pub fn read_assets(path: &Path) -> Result<Vec<ImageAsset>, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    data_lines(&text)
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::BadIndex {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Serializes assets as JSON lines with an optional provenance line.
pub fn assets_text(assets: &[ImageAsset], config_digest: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(d) = config_digest {
        out.push_str(&digest_line(d));
    }
    for a in assets {
        out.push_str(&serde_json::to_string(a).expect("asset serialization"));
        out.push('\n');
    }
    out
}

/// Resolves asset ids to files under a store root.
pub struct StoreImageLoader {
    root: PathBuf,
    paths: HashMap<String, String>,
}

impl StoreImageLoader {
    pub fn new<'a>(root: impl Into<PathBuf>, assets: impl IntoIterator<Item = &'a ImageAsset>) -> Self {
        let paths = assets
            .into_iter()
            .filter(|a| a.is_fetched())
            .filter_map(|a| a.byte_path.clone().map(|p| (a.asset_id.clone(), p)))
            .collect();
        Self { root: root.into(), paths }
    }
}

impl ImageLoader for StoreImageLoader {
    fn load(&self, asset_id: &str) -> Result<RgbImage, ImageLoadError> {
        let rel = self
            .paths
            .get(asset_id)
            .ok_or_else(|| ImageLoadError::NotFetched(asset_id.to_string()))?;
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|source| ImageLoadError::Io { path: path.clone(), source })?;
        let img = image::load_from_memory(&bytes).map_err(|source| ImageLoadError::Decode { path, source })?;
        Ok(img.to_rgb8())
    }
}
