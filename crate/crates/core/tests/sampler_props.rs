use std::collections::BTreeMap;

use chrono::NaiveDate;
use proed_core::sampling::{
    acceptance_probability, count_valid_selections, draw_days, plan_stratified, MonthKey, SamplePlan, SamplingError,
    MIN_ACCEPTANCE,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mk(s: &str) -> MonthKey {
    s.parse().unwrap()
}

fn valid(plan: &SamplePlan) {
    for s in &plan.strata {
        assert_eq!(s.days.len(), plan.days_per_month as usize);
        for w in s.days.windows(2) {
            assert!(w[1] >= w[0] + 2, "{}: {:?}", s.month, s.days);
        }
        for &d in &s.days {
            assert!(NaiveDate::from_ymd_opt(s.month.year(), s.month.month(), d).is_some(), "{} day {d}", s.month);
        }
    }
}

#[test]
fn reference_range_plan() {
    let plan = plan_stratified(mk("2017-01"), mk("2022-06"), 3, 17).unwrap();
    assert_eq!(plan.strata.len(), 66);
    valid(&plan);
    assert_eq!(mk("2020-02").days_in_month(), 29);
    assert_eq!(mk("2021-02").days_in_month(), 28);
    assert_eq!(plan, plan_stratified(mk("2017-01"), mk("2022-06"), 3, 17).unwrap());
    assert_ne!(plan, plan_stratified(mk("2017-01"), mk("2022-06"), 3, 18).unwrap());
    assert_eq!(SamplePlan::from_text(&plan.to_text(Some("d"))).unwrap(), plan);
}

#[test]
fn month_draws_do_not_depend_on_range() {
    let wide = plan_stratified(mk("2017-01"), mk("2022-06"), 3, 5).unwrap();
    let narrow = plan_stratified(mk("2019-03"), mk("2019-05"), 3, 5).unwrap();
    for s in &narrow.strata {
        assert_eq!(wide.days_for(s.month).unwrap(), s.days.as_slice());
    }
}

/// Every 3-subset of `1..=days` with pairwise gaps of at least 2.
fn enumerate_triples(days: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for a in 1..=days {
        for b in a + 2..=days {
            for c in b + 2..=days {
                out.push(vec![a, b, c]);
            }
        }
    }
    out
}

#[test]
fn toy_month_triples_are_uniform() {
    let all = enumerate_triples(7);
    assert_eq!(all.len(), 10);
    assert_eq!(count_valid_selections(7, 3), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut freq: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
    let draws = 100_000;
    for _ in 0..draws {
        *freq.entry(draw_days(&mut rng, 7, 3)).or_default() += 1;
    }
    assert_eq!(freq.len(), 10);
    for t in &all {
        let f = f64::from(freq[t]) / f64::from(draws);
        assert!((f - 0.1).abs() <= 0.01, "{t:?}: {f}");
    }
}

#[test]
fn five_day_month_has_one_triple() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        assert_eq!(draw_days(&mut rng, 5, 3), vec![1, 3, 5]);
    }
}

#[test]
fn february_support_matches_enumeration() {
    let all: std::collections::BTreeSet<Vec<u32>> = enumerate_triples(28).into_iter().collect();
    assert_eq!(all.len(), 2600);
    assert_eq!(count_valid_selections(28, 3), 2600);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20_000 {
        assert!(all.contains(&draw_days(&mut rng, 28, 3)));
    }
    assert!((acceptance_probability(28, 3) - 2600.0 / 3276.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn any_plan_is_valid(y0 in 1990i32..2100, m0 in 1u32..=12, span in 0i64..40, k in 1u32..=14, seed: u64) {
        let start = MonthKey::new(y0, m0).unwrap();
        let mut end = start;
        for _ in 0..span {
            end = end.next();
        }
        match plan_stratified(start, end, k, seed) {
            Ok(plan) => {
                prop_assert_eq!(plan.strata.len() as i64, span + 1);
                valid(&plan);
            }
            Err(SamplingError::Impractical { acceptance, days, .. }) => {
                prop_assert!(acceptance < MIN_ACCEPTANCE);
                prop_assert_eq!(acceptance, acceptance_probability(days, k));
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn count_matches_enumeration(days in 1u32..=16, k in 1u32..=6) {
        let mut n = 0u64;
        for mask in 0u32..(1 << days) {
            if mask.count_ones() == k && mask & (mask >> 1) == 0 {
                n += 1;
            }
        }
        prop_assert_eq!(count_valid_selections(days, k), n);
    }
}
