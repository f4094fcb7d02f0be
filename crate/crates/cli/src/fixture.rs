//! Synthetic 120-image corpus for exercising the whole pipeline offline.
//!
//! Images are 32x32 PNGs: a 16x16 grid of random 2-pixel blocks tinted red
//! (Pro-ED hashtags) or blue (Not Pro-ED hashtags, and the blue selfies).
//! Planted cases:
//!
//! * 30 red and 30 blue distinct training images
//! * 3 byte-identical copies under new URLs, 3 near duplicates (1 to 6 bits)
//! * 3 reposts of an existing URL, 1 repost of a red URL under a Not Pro-ED tag
//! * one link to a text file and one malformed metadata line
//! * 4 `#selfie` posts on the planned days of every month of 2021, with a
//!   known number of red ones, plus 6 selfies on unplanned days
//!
//! All other images are pairwise at least 7 bits apart so they never merge.

use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use chrono::{DateTime, Duration, TimeZone, Utc};
use image::{ImageFormat, Rgb, RgbImage};
use proed_core::dedup::{dhash, PerceptualHash};
use proed_core::io::write_atomic;
use proed_core::sampling::{plan_stratified, MonthKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use url::Url;

pub const IMAGE_COUNT: usize = 120;
pub const SAMPLE_SEED: u64 = 7;
pub const YEAR: i32 = 2021;
/// Red selfies among the four planned ones, per month of [`YEAR`].
pub const RED_PER_MONTH: [u64; 12] = [1, 1, 0, 1, 2, 2, 3, 3, 2, 2, 3, 4];
pub const SELFIES_PER_MONTH: u64 = 4;

const PRO_TAGS: [&str; 5] = ["thinspo", "ProAna", "#thinspiration", "fitspo", "Fitspiration"];
const NOT_TAGS: [&str; 6] = ["ootd", "travel", "pets", "#Animals", "photography", "fakecandid"];

pub const CONFIG: &str = r#"[paths]
archive = "archive/tweets.jsonl"

[dataset]
seed = 11

[train]
arch = "toy_linear"
seed = 3
batch_size = 8
learning_rate = 0.05

[sampling]
start = "2021-01"
end = "2021-12"
seed = 7
hashtags = ["selfie"]

[trend]
degree = 4
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tint {
    Red,
    Blue,
}

type Blocks = [u8; 256];

fn render(blocks: &Blocks, tint: Tint) -> RgbImage {
    RgbImage::from_fn(32, 32, |x, y| {
        let v = blocks[(y / 2 * 16 + x / 2) as usize];
        let (hi, lo) = (128 + v / 2, v / 4);
        match tint {
            Tint::Red => Rgb([hi, lo, lo]),
            Tint::Blue => Rgb([lo, lo, hi]),
        }
    })
}

fn png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("png encoding");
    buf.into_inner()
}

struct Generator {
    rng: ChaCha8Rng,
    hashes: Vec<PerceptualHash>,
}

impl Generator {
    /// A new image at least 7 bits away from every distinct image so far.
    fn distinct(&mut self, tint: Tint) -> (Blocks, RgbImage) {
        loop {
            let mut b = [0u8; 256];
            self.rng.fill(&mut b[..]);
            let img = render(&b, tint);
            let h = dhash(&img);
            if self.hashes.iter().all(|o| o.distance(h) >= 7) {
                self.hashes.push(h);
                return (b, img);
            }
        }
    }

    /// A perturbed copy within 1..=6 bits of the original, with different
    /// bytes, and at least 7 bits from everything else.
    fn near(&mut self, base: &Blocks, tint: Tint) -> RgbImage {
        let h0 = dhash(&render(base, tint));
        loop {
            let mut b = *base;
            for v in b.iter_mut() {
                *v = v.saturating_add_signed(self.rng.random_range(-6i8..=6));
            }
            let img = render(&b, tint);
            let h = dhash(&img);
            let apart = self.hashes.iter().filter(|o| **o != h0).all(|o| o.distance(h) >= 7);
            if b != *base && (1..=6).contains(&h0.distance(h)) && apart {
                self.hashes.push(h);
                return img;
            }
        }
    }
}

/// What the generated corpus should produce downstream.
#[derive(Debug, Clone)]
pub struct FixtureSummary {
    pub root: PathBuf,
    pub image_files: usize,
    /// `(month, planned images, red images)`
    pub months: Vec<(MonthKey, u64, u64)>,
}

impl FixtureSummary {
    pub fn expected_percent(&self) -> Vec<(MonthKey, f64)> {
        self.months.iter().map(|&(m, n, k)| (m, 100.0 * k as f64 / n as f64)).collect()
    }
}

struct Archive {
    lines: Vec<String>,
    next_id: u64,
    media: PathBuf,
}

impl Archive {
    fn post(&mut self, at: DateTime<Utc>, tags: &[&str], urls: &[String]) {
        self.next_id += 1;
        let line = json!({
            "id": self.next_id.to_string(),
            "created_at": at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "hashtags": tags,
            "like_count": self.next_id % 17,
            "retweet_count": self.next_id % 5,
            "reply_count": self.next_id % 3,
            "image_urls": urls,
        });
        self.lines.push(line.to_string());
    }

    fn save(&self, name: &str, bytes: &[u8]) -> Result<String> {
        let path = self.media.join(name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(Url::from_file_path(&path).map_err(|_| anyhow::anyhow!("not an absolute path: {}", path.display()))?.to_string())
    }
}

/// Writes `proed.toml`, `archive/tweets.jsonl` and `archive/media/*` under
/// `dir`. Output depends only on `dir`.
pub fn write_fixture(dir: &Path) -> Result<FixtureSummary> {
    fs::create_dir_all(dir)?;
    let root = dir.canonicalize()?;
    let media = root.join("archive").join("media");
    fs::create_dir_all(&media)?;
    let mut gen = Generator { rng: ChaCha8Rng::seed_from_u64(0x5eed_f1c5), hashes: Vec::new() };
    let mut ar = Archive { lines: Vec::new(), next_id: 1000, media };
    let mut files = 0usize;
    let base = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();

    let mut red = Vec::new();
    let mut blue = Vec::new();
    for i in 0..30 {
        for (tint, list, tags, name) in [(Tint::Red, &mut red, &PRO_TAGS[..], "red"), (Tint::Blue, &mut blue, &NOT_TAGS[..], "blue")] {
            let (blocks, img) = gen.distinct(tint);
            let url = ar.save(&format!("{name}_{i:02}.png"), &png(&img))?;
            files += 1;
            let offset = if tint == Tint::Red { 0 } else { 3 };
            ar.post(base + Duration::hours(7 * i as i64 + offset), &[tags[i % tags.len()]], std::slice::from_ref(&url));
            list.push((blocks, url));
        }
    }

    let later = Utc.with_ymd_and_hms(2019, 6, 1, 0, 0, 0).unwrap();
    let copies = [(Tint::Red, 0), (Tint::Blue, 0), (Tint::Red, 1)];
    for (k, &(tint, i)) in copies.iter().enumerate() {
        let (blocks, tag) = if tint == Tint::Red { (red[i].0, PRO_TAGS[0]) } else { (blue[i].0, NOT_TAGS[0]) };
        let url = ar.save(&format!("copy_{k}.png"), &png(&render(&blocks, tint)))?;
        files += 1;
        ar.post(later + Duration::hours(k as i64), &[tag], &[url]);
    }
    let nears = [(Tint::Red, 2), (Tint::Blue, 1), (Tint::Blue, 2)];
    for (k, &(tint, i)) in nears.iter().enumerate() {
        let (blocks, tag) = if tint == Tint::Red { (red[i].0, PRO_TAGS[1]) } else { (blue[i].0, NOT_TAGS[1]) };
        let img = gen.near(&blocks, tint);
        let url = ar.save(&format!("near_{k}.png"), &png(&img))?;
        files += 1;
        ar.post(later + Duration::hours(10 + k as i64), &[tag], &[url]);
    }
    ar.post(later + Duration::hours(20), &["thinspo"], std::slice::from_ref(&red[3].1));
    ar.post(later + Duration::hours(21), &["ootd"], std::slice::from_ref(&blue[3].1));
    ar.post(later + Duration::hours(22), &["fitspo", "thinspo"], std::slice::from_ref(&red[4].1));
    ar.post(later + Duration::hours(23), &["travel"], std::slice::from_ref(&red[5].1));
    let note = ar.save("notes.txt", b"not an image\n")?;
    ar.post(later + Duration::hours(24), &["thinspo"], &[note]);
    ar.lines.push("{\"id\": \"broken\", \"created_at\": ".into());

    let start = MonthKey::new(YEAR, 1).unwrap();
    let end = MonthKey::new(YEAR, 12).unwrap();
    let plan = plan_stratified(start, end, 3, SAMPLE_SEED)?;
    let mut months = Vec::new();
    for (s, &reds) in plan.strata.iter().zip(&RED_PER_MONTH) {
        let m = s.month;
        for j in 0..SELFIES_PER_MONTH {
            let tint = if j < reds { Tint::Red } else { Tint::Blue };
            let (_, img) = gen.distinct(tint);
            let url = ar.save(&format!("selfie_{m}_{j}.png"), &png(&img))?;
            files += 1;
            let day = s.days[j as usize % s.days.len()];
            let at = Utc.with_ymd_and_hms(m.year(), m.month(), day, 10 + j as u32, 0, 0).unwrap();
            ar.post(at, &["selfie"], &[url]);
        }
        months.push((m, SELFIES_PER_MONTH, reds));
        if m.month() <= 6 {
            let day = (1..=m.days_in_month()).find(|d| !s.days.contains(d)).unwrap();
            let (_, img) = gen.distinct(Tint::Red);
            let url = ar.save(&format!("offplan_{m}.png"), &png(&img))?;
            files += 1;
            ar.post(Utc.with_ymd_and_hms(m.year(), m.month(), day, 9, 0, 0).unwrap(), &["selfie"], &[url]);
        }
    }
    ensure!(files == IMAGE_COUNT, "fixture produced {files} images, expected {IMAGE_COUNT}");

    let mut text = String::new();
    for l in &ar.lines {
        let _ = writeln!(text, "{l}");
    }
    write_atomic(&root.join("archive").join("tweets.jsonl"), text.as_bytes())?;
    write_atomic(&root.join(crate::config::DEFAULT_CONFIG_FILE), CONFIG.as_bytes())?;
    Ok(FixtureSummary { root, image_files: files, months })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic_and_parses() {
        let a = tempfile::tempdir().unwrap();
        let s = write_fixture(a.path()).unwrap();
        assert_eq!(s.image_files, IMAGE_COUNT);
        assert_eq!(s.months.len(), 12);
        let first = fs::read(a.path().join("archive/media/near_1.png")).unwrap();
        let again = write_fixture(a.path()).unwrap();
        assert_eq!(again.months, s.months);
        assert_eq!(fs::read(a.path().join("archive/media/near_1.png")).unwrap(), first);
        let cfg = crate::config::PipelineConfig::from_toml(CONFIG).unwrap();
        assert_eq!(crate::config::errors(&crate::config::validate_config(&cfg)).count(), 0);
    }
}
