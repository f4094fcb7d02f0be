//! Archived post metadata, image link extraction, fetching into the
//! content-addressed store, and hashtag-based source classes.

mod record;
mod store;
mod taxonomy;

use std::fs;
use std::path::PathBuf;

pub use record::{
    extract_image_links, normalize_hashtag, parse_metadata, serialize_record, ImageLink, ParseIssue,
    ParseIssueKind, ParseReport, TweetRecord,
};
pub use store::{
    assets_text, read_assets, AssetStore, DefaultFetcher, FetchError, FetchPolicy, FetchReport, FetchStatus,
    FetchedBody, Fetcher, ImageAsset, ImageLoadError, ImageLoader, StoreError, StoreImageLoader, INDEX_FILE,
};
pub use taxonomy::{HashtagTaxonomy, OverlappingTaxonomy, SourceClass, DEFAULT_NOT_PRO_ED, DEFAULT_PRO_ED};

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("reading archive {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A source of archived post records.
pub trait SourceAdapter {
    fn name(&self) -> &str;
    fn load(&self) -> Result<(Vec<TweetRecord>, ParseReport), SourceError>;
}

/// Reads a newline-delimited metadata file from disk.
pub struct ArchiveAdapter {
    path: PathBuf,
}

impl ArchiveAdapter {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl SourceAdapter for ArchiveAdapter {
    fn name(&self) -> &str {
        "local-archive"
    }

    fn load(&self) -> Result<(Vec<TweetRecord>, ParseReport), SourceError> {
        let text = fs::read_to_string(&self.path).map_err(|source| SourceError::Io { path: self.path.clone(), source })?;
        Ok(parse_metadata(text.lines()))
    }
}
