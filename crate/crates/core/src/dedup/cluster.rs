use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::dhash::{similarity, PerceptualHash};

/// Minimum similarity for two hashes to count as near duplicates.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityThreshold(f64);

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("similarity threshold must lie in (0, 1], got {0}")]
pub struct BadThreshold(pub f64);

impl SimilarityThreshold {
    pub const DEFAULT: SimilarityThreshold = SimilarityThreshold(0.90);

    pub fn new(t: f64) -> Result<Self, BadThreshold> {
        if t > 0.0 && t <= 1.0 {
            Ok(Self(t))
        } else {
            Err(BadThreshold(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Exact: similarities are multiples of 1/64 and representable.
    pub fn admits(self, a: PerceptualHash, b: PerceptualHash) -> bool {
        similarity(a, b) >= self.0
    }
}

impl Default for SimilarityThreshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Groups of indices, each sorted, ordered by their smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_iter().filter(|g| !g.is_empty()).collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// Input to clustering: an asset with its hash and posting time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedAsset {
    pub asset_id: String,
    pub posted_at: DateTime<Utc>,
    pub hash: PerceptualHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DupCluster {
    pub member_asset_ids: Vec<String>,
    pub canonical_asset_id: String,
}

/// Earliest `posted_at`, then smallest `asset_id`.
pub fn select_canonical<'a, I>(members: I) -> Option<&'a str>
where
    I: IntoIterator<Item = (&'a str, DateTime<Utc>)>,
{
    members
        .into_iter()
        .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)))
        .map(|(id, _)| id)
}

/// Connected components of the graph joining assets whose hash similarity
/// meets `threshold`. Exhaustive pairwise comparison.
pub fn cluster_near_duplicates(assets: &[HashedAsset], threshold: SimilarityThreshold) -> Vec<DupCluster> {
    let mut uf = UnionFind::new(assets.len());
    for i in 0..assets.len() {
        for j in i + 1..assets.len() {
            if threshold.admits(assets[i].hash, assets[j].hash) {
                uf.union(i, j);
            }
        }
    }
    uf.groups()
        .into_iter()
        .map(|g| {
            let canonical = select_canonical(g.iter().map(|&i| (assets[i].asset_id.as_str(), assets[i].posted_at)))
                .expect("groups are non-empty")
                .to_string();
            DupCluster {
                member_asset_ids: g.iter().map(|&i| assets[i].asset_id.clone()).collect(),
                canonical_asset_id: canonical,
            }
        })
        .collect()
}
