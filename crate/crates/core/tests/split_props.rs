use std::collections::BTreeSet;

use proed_core::dataset::{split, split_sizes, DatasetError, Label, LabeledExample, Split, SplitConfig};
use proed_core::ingest::SourceClass;
use proptest::prelude::*;

fn examples(n: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::ProEd } else { Label::NotProEd };
            let source_class = if label == Label::ProEd { SourceClass::ProEd } else { SourceClass::NotProEd };
            LabeledExample { asset_id: format!("a{i:05}"), label, source_class }
        })
        .collect()
}

/// Half-away-from-zero rounding of `num / den` in integers.
fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_and_sizes(n in 6usize..400, seed: u64) {
        let ex = examples(n);
        let m = split(&ex, &SplitConfig { seed, ..Default::default() }).unwrap();
        let mut all = BTreeSet::new();
        let mut sizes = [0usize; 3];
        for (k, s) in Split::ALL.iter().enumerate() {
            for e in m.examples_in(*s) {
                prop_assert!(all.insert(e.asset_id.clone()), "{} in two splits", e.asset_id);
                sizes[k] += 1;
            }
        }
        prop_assert_eq!(all.len(), n);
        let test = round_div(n, 5);
        let val = round_div(n - test, 10);
        prop_assert_eq!((sizes[0], sizes[1], sizes[2]), (n - test - val, val, test));
        prop_assert_eq!(split_sizes(n, 0.2, 0.1), (n - test - val, val, test));
    }

    #[test]
    fn order_of_input_does_not_matter(n in 6usize..60, seed: u64) {
        let ex = examples(n);
        let mut rev = ex.clone();
        rev.reverse();
        let cfg = SplitConfig { seed, ..Default::default() };
        prop_assert_eq!(split(&ex, &cfg).unwrap(), split(&rev, &cfg).unwrap());
    }

    #[test]
    fn manifest_round_trips(n in 6usize..80, seed: u64) {
        let m = split(&examples(n), &SplitConfig { seed, ..Default::default() }).unwrap();
        let text = m.to_text(Some("abc"));
        prop_assert_eq!(proed_core::dataset::DatasetManifest::from_text(&text).unwrap(), m);
    }
}

#[test]
fn test_membership_frequency() {
    let ex = examples(10);
    let seeds = 10_000u64;
    let mut hits = [0u32; 10];
    for seed in 0..seeds {
        let m = split(&ex, &SplitConfig { seed, ..Default::default() }).unwrap();
        for (i, e) in ex.iter().enumerate() {
            if m.split_of(&e.asset_id) == Some(Split::Test) {
                hits[i] += 1;
            }
        }
    }
    for h in hits {
        let f = f64::from(h) / seeds as f64;
        assert!((f - 0.20).abs() <= 0.02, "frequency {f}");
    }
}

#[test]
fn degenerate_inputs() {
    assert_eq!(split(&examples(5), &SplitConfig::default()), Err(DatasetError::TooSmall { n: 5, min_n: 6 }));
    let one_class: Vec<_> = examples(12).into_iter().filter(|e| e.label == Label::ProEd).collect();
    assert!(matches!(split(&one_class, &SplitConfig::default()), Err(DatasetError::SingleClass { .. })));
    let m = split(&one_class, &SplitConfig { allow_single_class: true, ..Default::default() }).unwrap();
    assert_eq!(m.warnings.len(), 1);
    assert!(matches!(
        split(&examples(20), &SplitConfig { test_frac: 1.0, ..Default::default() }),
        Err(DatasetError::BadFraction { .. })
    ));
}
