#![allow(dead_code)]

use std::collections::HashMap;

use chrono::{DateTime, TimeZone, Utc};
use image::{Rgb, RgbImage};
use proed_core::ingest::{FetchStatus, ImageAsset, ImageLoadError, ImageLoader, SourceClass};

pub fn ts(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_500_000_000 + secs, 0).unwrap()
}

pub fn asset(id: &str, url: &str, tweet: &str, secs: i64, class: SourceClass) -> ImageAsset {
    ImageAsset {
        asset_id: id.to_string(),
        source_url: url.to_string(),
        tweet_id: tweet.to_string(),
        posted_at: ts(secs),
        hashtags: match class {
            SourceClass::ProEd => vec!["thinspo".into()],
            SourceClass::NotProEd => vec!["travel".into()],
            _ => vec![],
        },
        fetch_status: FetchStatus::Fetched,
        byte_path: Some(format!("{id}.png")),
        source_class: class,
        detail: None,
    }
}

/// In-memory image source keyed by asset id.
#[derive(Default)]
pub struct MemLoader(pub HashMap<String, RgbImage>);

impl MemLoader {
    pub fn insert(&mut self, id: &str, img: RgbImage) {
        self.0.insert(id.to_string(), img);
    }
}

impl ImageLoader for MemLoader {
    fn load(&self, asset_id: &str) -> Result<RgbImage, ImageLoadError> {
        self.0.get(asset_id).cloned().ok_or_else(|| ImageLoadError::NotFetched(asset_id.to_string()))
    }
}

pub fn solid(rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(8, 8, Rgb(rgb))
}
