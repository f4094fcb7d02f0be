use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::normalize_hashtag;

pub const DEFAULT_PRO_ED: [&str; 5] = ["proana", "thinspo", "thinspiration", "fitspiration", "fitspo"];
pub const DEFAULT_NOT_PRO_ED: [&str; 6] = ["ootd", "fakecandid", "animals", "pets", "travel", "photography"];

/// Class an asset inherits from the hashtags it was posted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceClass {
    ProEd,
    NotProEd,
    Conflict,
    Unlabeled,
}

impl SourceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceClass::ProEd => "pro_ed",
            SourceClass::NotProEd => "not_pro_ed",
            SourceClass::Conflict => "conflict",
            SourceClass::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("hashtags listed on both taxonomy sides: {0:?}")]
pub struct OverlappingTaxonomy(pub Vec<String>);

/// Two disjoint hashtag sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HashtagTaxonomy {
    pro_ed: BTreeSet<String>,
    not_pro_ed: BTreeSet<String>,
}

impl Default for HashtagTaxonomy {
    fn default() -> Self {
        Self::new(DEFAULT_PRO_ED, DEFAULT_NOT_PRO_ED).expect("default taxonomy is disjoint")
    }
}

impl HashtagTaxonomy {
    pub fn new<A, B, S, T>(pro_ed: A, not_pro_ed: B) -> Result<Self, OverlappingTaxonomy>
    where
        A: IntoIterator<Item = S>,
        B: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let pro_ed: BTreeSet<String> = pro_ed.into_iter().map(|s| normalize_hashtag(s.as_ref())).collect();
        let not_pro_ed: BTreeSet<String> =
            not_pro_ed.into_iter().map(|s| normalize_hashtag(s.as_ref())).collect();
        let overlap: Vec<String> = pro_ed.intersection(&not_pro_ed).cloned().collect();
        if !overlap.is_empty() {
            return Err(OverlappingTaxonomy(overlap));
        }
        Ok(Self { pro_ed, not_pro_ed })
    }

    pub fn pro_ed(&self) -> &BTreeSet<String> {
        &self.pro_ed
    }

    pub fn not_pro_ed(&self) -> &BTreeSet<String> {
        &self.not_pro_ed
    }

    /// Classifies a hashtag set; hashtags are normalized before lookup.
    pub fn assign_source_class<I, S>(&self, hashtags: I) -> SourceClass
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let (mut pro, mut not) = (false, false);
        for h in hashtags {
            let h = normalize_hashtag(h.as_ref());
            pro |= self.pro_ed.contains(&h);
            not |= self.not_pro_ed.contains(&h);
        }
        match (pro, not) {
            (true, true) => SourceClass::Conflict,
            (true, false) => SourceClass::ProEd,
            (false, true) => SourceClass::NotProEd,
            (false, false) => SourceClass::Unlabeled,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lists() {
        let t = HashtagTaxonomy::default();
        assert_eq!(t.pro_ed().len(), 5);
        assert_eq!(t.not_pro_ed().len(), 6);
        assert!(t.pro_ed().contains("thinspiration"));
        assert!(t.not_pro_ed().contains("fakecandid"));
    }

    #[test]
    fn classification_cases() {
        let t = HashtagTaxonomy::default();
        assert_eq!(t.assign_source_class(["proana"]), SourceClass::ProEd);
        assert_eq!(t.assign_source_class(["travel", "photography"]), SourceClass::NotProEd);
        assert_eq!(t.assign_source_class(["proana", "pets"]), SourceClass::Conflict);
        assert_eq!(t.assign_source_class(["selfie"]), SourceClass::Unlabeled);
        assert_eq!(t.assign_source_class(Vec::<String>::new()), SourceClass::Unlabeled);
        assert_eq!(t.assign_source_class(["#Thinspo"]), SourceClass::ProEd);
    }

    #[test]
    fn overlap_rejected() {
        let err = HashtagTaxonomy::new(["a", "b"], ["#B", "c"]).unwrap_err();
        assert_eq!(err.0, vec!["b".to_string()]);
    }
}
