//! Exact and near-duplicate removal.
//!
//! Exact duplicates (same URL, then same bytes) collapse first; the survivors
//! are hashed with dHash and grouped into transitive near-duplicate clusters.
//! Each group keeps one canonical asset, which absorbs the hashtags of the
//! members it replaces so cross-class reposts surface as conflicts.

mod cluster;
mod dhash;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{
    cluster_near_duplicates, select_canonical, BadThreshold, DupCluster, HashedAsset, SimilarityThreshold, UnionFind,
};
pub use dhash::{
    dhash, dhash_bytes, hash_grid, luma_milli, reduce_to_grid, similarity, BadHashHex, PerceptualHash, GRID_COLS,
    GRID_ROWS,
};

use crate::ingest::{HashtagTaxonomy, ImageAsset};
use crate::io::digest_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    SameUrl,
    SameBytes,
    NearDuplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub removed_asset_id: String,
    pub reason: RemovalReason,
    pub canonical_asset_id: String,
    pub removed_tweet_id: String,
    pub removed_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFailure {
    pub asset_id: String,
    pub detail: String,
}

/// Orders assets for canonical selection: posted_at, asset_id, then the
/// (tweet, url) key so equal-byte assets still order totally.
fn canonical_order(a: &ImageAsset, b: &ImageAsset) -> std::cmp::Ordering {
    a.posted_at
        .cmp(&b.posted_at)
        .then_with(|| a.asset_id.cmp(&b.asset_id))
        .then_with(|| a.tweet_id.cmp(&b.tweet_id))
        .then_with(|| a.source_url.cmp(&b.source_url))
}

fn absorb_hashtags(canonical: &mut ImageAsset, others: &[&ImageAsset], taxonomy: Option<&HashtagTaxonomy>) {
    for o in others {
        for h in &o.hashtags {
            if !canonical.hashtags.contains(h) {
                canonical.hashtags.push(h.clone());
            }
        }
    }
    if let Some(t) = taxonomy {
        canonical.source_class = t.assign_source_class(&canonical.hashtags);
    }
}

fn collapse_by<K, F>(
    assets: Vec<ImageAsset>,
    key: F,
    reason: RemovalReason,
    taxonomy: Option<&HashtagTaxonomy>,
    removals: &mut Vec<Removal>,
) -> Vec<ImageAsset>
where
    K: Ord,
    F: Fn(&ImageAsset) -> K,
{
    let mut groups: BTreeMap<K, Vec<ImageAsset>> = BTreeMap::new();
    for a in assets {
        groups.entry(key(&a)).or_default().push(a);
    }
    let mut kept = Vec::with_capacity(groups.len());
    for (_, mut members) in groups {
        members.sort_by(canonical_order);
        let mut rest = members.split_off(1);
        let mut canonical = members.pop().expect("non-empty group");
        rest.sort_by(canonical_order);
        absorb_hashtags(&mut canonical, &rest.iter().collect::<Vec<_>>(), taxonomy);
        for r in rest {
            removals.push(Removal {
                removed_asset_id: r.asset_id,
                reason,
                canonical_asset_id: canonical.asset_id.clone(),
                removed_tweet_id: r.tweet_id,
                removed_url: r.source_url,
            });
        }
        kept.push(canonical);
    }
    kept
}

/// Keeps one asset per source URL, then one per byte content.
pub fn dedup_exact(assets: Vec<ImageAsset>, taxonomy: Option<&HashtagTaxonomy>) -> (Vec<ImageAsset>, Vec<Removal>) {
    let mut removals = Vec::new();
    let by_url = collapse_by(assets, |a| a.source_url.clone(), RemovalReason::SameUrl, taxonomy, &mut removals);
    let mut kept = collapse_by(by_url, |a| a.asset_id.clone(), RemovalReason::SameBytes, taxonomy, &mut removals);
    kept.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    (kept, removals)
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    /// Sorted by asset id.
    pub kept: Vec<ImageAsset>,
    pub removals: Vec<Removal>,
    pub clusters: Vec<DupCluster>,
    /// Hashes of every asset that survived exact dedup and decoded.
    pub hashes: Vec<(String, PerceptualHash)>,
    pub hash_failures: Vec<HashFailure>,
}

/// Full dedup: exact collapse, hashing, near-duplicate clustering.
///
/// `hash_of` is evaluated in parallel; assets it rejects are dropped and
/// listed in `hash_failures`.
pub fn dedup_pass<F>(
    assets: Vec<ImageAsset>,
    hash_of: F,
    threshold: SimilarityThreshold,
    taxonomy: Option<&HashtagTaxonomy>,
) -> DedupOutcome
where
    F: Fn(&ImageAsset) -> Result<PerceptualHash, String> + Sync,
{
    let (exact_kept, mut removals) = dedup_exact(assets, taxonomy);
    let hashed: Vec<Result<PerceptualHash, String>> = exact_kept.par_iter().map(&hash_of).collect();

    let mut survivors = Vec::new();
    let mut hash_failures = Vec::new();
    let mut hashes = Vec::new();
    for (a, h) in exact_kept.into_iter().zip(hashed) {
        match h {
            Ok(h) => {
                hashes.push((a.asset_id.clone(), h));
                survivors.push((a, h));
            }
            Err(detail) => hash_failures.push(HashFailure { asset_id: a.asset_id, detail }),
        }
    }

    let inputs: Vec<HashedAsset> = survivors
        .iter()
        .map(|(a, h)| HashedAsset { asset_id: a.asset_id.clone(), posted_at: a.posted_at, hash: *h })
        .collect();
    let clusters = cluster_near_duplicates(&inputs, threshold);

    let final_canonical: BTreeMap<&str, &str> = clusters
        .iter()
        .flat_map(|c| c.member_asset_ids.iter().map(move |m| (m.as_str(), c.canonical_asset_id.as_str())))
        .collect();
    for r in removals.iter_mut() {
        if let Some(c) = final_canonical.get(r.canonical_asset_id.as_str()) {
            r.canonical_asset_id = c.to_string();
        }
    }

    let by_id: BTreeMap<&str, &ImageAsset> = survivors.iter().map(|(a, _)| (a.asset_id.as_str(), a)).collect();
    let mut kept = Vec::with_capacity(clusters.len());
    for c in &clusters {
        let mut canonical = by_id[c.canonical_asset_id.as_str()].clone();
        let mut others: Vec<&ImageAsset> = c
            .member_asset_ids
            .iter()
            .filter(|id| **id != c.canonical_asset_id)
            .map(|id| by_id[id.as_str()])
            .collect();
        others.sort_by(|a, b| canonical_order(a, b));
        absorb_hashtags(&mut canonical, &others, taxonomy);
        for o in others {
            removals.push(Removal {
                removed_asset_id: o.asset_id.clone(),
                reason: RemovalReason::NearDuplicate,
                canonical_asset_id: canonical.asset_id.clone(),
                removed_tweet_id: o.tweet_id.clone(),
                removed_url: o.source_url.clone(),
            });
        }
        kept.push(canonical);
    }
    kept.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    DedupOutcome { kept, removals, clusters, hashes, hash_failures }
}

/// `asset_id<TAB>hex16` lines, sorted by asset id.
pub fn hash_index_text(hashes: &[(String, PerceptualHash)], config_digest: Option<&str>) -> String {
    let mut rows: Vec<_> = hashes.iter().collect();
    rows.sort();
    let mut out = String::new();
    if let Some(d) = config_digest {
        out.push_str(&digest_line(d));
    }
    for (id, h) in rows {
        out.push_str(&format!("{id}\t{h}\n"));
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("hash index line {line}: {detail}")]
pub struct HashIndexError {
    pub line: usize,
    pub detail: String,
}

pub fn parse_hash_index(text: &str) -> Result<Vec<(String, PerceptualHash)>, HashIndexError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |detail: String| HashIndexError { line: i + 1, detail };
        let (id, hex) = line.split_once('\t').ok_or_else(|| err("missing tab".into()))?;
        out.push((id.to_string(), hex.parse().map_err(|e: BadHashHex| err(e.to_string()))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FetchStatus, SourceClass};
    use chrono::{TimeZone, Utc};

    fn asset(id: &str, url: &str, tweet: &str, day: u32, tags: &[&str]) -> ImageAsset {
        ImageAsset {
            asset_id: id.into(),
            source_url: url.into(),
            tweet_id: tweet.into(),
            posted_at: Utc.with_ymd_and_hms(2020, 1, day, 0, 0, 0).unwrap(),
            hashtags: tags.iter().map(|s| s.to_string()).collect(),
            fetch_status: FetchStatus::Fetched,
            byte_path: Some(format!("{id}.png")),
            source_class: SourceClass::Unlabeled,
            detail: None,
        }
    }

    #[test]
    fn same_url_collapses() {
        let (kept, rem) = dedup_exact(vec![asset("a", "u1", "t1", 2, &[]), asset("a", "u1", "t2", 1, &[])], None);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].tweet_id, "t2");
        assert_eq!(rem.len(), 1);
        assert_eq!(rem[0].reason, RemovalReason::SameUrl);
    }

    #[test]
    fn distinct_assets_all_kept() {
        let assets: Vec<_> = (0..5).map(|i| asset(&format!("id{i}"), &format!("u{i}"), &format!("t{i}"), 1, &[])).collect();
        let (kept, rem) = dedup_exact(assets, None);
        assert_eq!(kept.len(), 5);
        assert!(rem.is_empty());
    }

    #[test]
    fn same_bytes_different_url_collapses_and_merges_classes() {
        let tax = HashtagTaxonomy::default();
        let (kept, rem) = dedup_exact(
            vec![asset("b", "u2", "t2", 3, &["pets"]), asset("b", "u1", "t1", 3, &["proana"])],
            Some(&tax),
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].tweet_id, "t1");
        assert_eq!(kept[0].source_class, SourceClass::Conflict);
        assert_eq!(rem[0].reason, RemovalReason::SameBytes);
        assert_eq!(rem[0].canonical_asset_id, "b");
    }

    #[test]
    fn full_pass_removes_near_duplicates_and_is_idempotent() {
        let hashes: BTreeMap<&str, u64> = [("a", 0u64), ("b", 0b11), ("c", u64::MAX), ("d", 0xffff_0000)].into();
        let assets = vec![
            asset("a", "ua", "t1", 5, &["thinspo"]),
            asset("b", "ub", "t2", 4, &["thinspo"]),
            asset("c", "uc", "t3", 1, &["travel"]),
            asset("d", "ud", "t4", 1, &["travel"]),
        ];
        let h = |a: &ImageAsset| Ok(PerceptualHash(hashes[a.asset_id.as_str()]));
        let out = dedup_pass(assets, h, SimilarityThreshold::DEFAULT, None);
        let ids: Vec<_> = out.kept.iter().map(|a| a.asset_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "d"]);
        assert_eq!(out.removals.len(), 1);
        assert_eq!(out.removals[0].reason, RemovalReason::NearDuplicate);
        assert_eq!(out.removals[0].canonical_asset_id, "b");

        let again = dedup_pass(out.kept.clone(), h, SimilarityThreshold::DEFAULT, None);
        assert!(again.removals.is_empty());
        assert_eq!(again.kept, out.kept);
    }

    #[test]
    fn hash_failures_are_reported() {
        let assets = vec![asset("a", "ua", "t1", 1, &[]), asset("z", "uz", "t2", 1, &[])];
        let out = dedup_pass(
            assets,
            |a| if a.asset_id == "z" { Err("bad".into()) } else { Ok(PerceptualHash(1)) },
            SimilarityThreshold::DEFAULT,
            None,
        );
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.hash_failures, vec![HashFailure { asset_id: "z".into(), detail: "bad".into() }]);
    }

    #[test]
    fn hash_index_round_trip() {
        let rows = vec![("b".to_string(), PerceptualHash(7)), ("a".to_string(), PerceptualHash(u64::MAX))];
        let text = hash_index_text(&rows, Some("d1"));
        assert_eq!(text, "# config_digest=d1\na\tffffffffffffffff\nb\t0000000000000007\n");
        let mut parsed = parse_hash_index(&text).unwrap();
        parsed.sort();
        let mut expect = rows.clone();
        expect.sort();
        assert_eq!(parsed, expect);
        assert!(parse_hash_index("x 123").is_err());
    }
}
