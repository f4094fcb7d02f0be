//! Stratified temporal sampling: a few pairwise non-consecutive days per
//! calendar month, drawn reproducibly from a seed.
//!
//! Each month draws from its own generator seeded by mixing the absolute month
//! index into the plan seed (splitmix64), so a month's days do not depend on
//! where the planned range starts or ends.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::ImageAsset;
use crate::io::digest_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MonthKey {
    year: i32,
    month: u32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid month {0:?}")]
    BadMonth(String),
    #[error("start {start} is after end {end}")]
    EmptyRange { start: MonthKey, end: MonthKey },
    #[error("{month} has {days} days; {k} pairwise non-consecutive days need at least {need}")]
    Infeasible { month: MonthKey, days: u32, k: u32, need: u32 },
    #[error("{k} pairwise non-consecutive days in {month} ({days} days) would be accepted by the sampler with probability {acceptance:.2e}; use fewer days per month")]
    Impractical { month: MonthKey, days: u32, k: u32, acceptance: f64 },
    #[error("plan line {line}: {detail}")]
    BadPlan { line: usize, detail: String },
}

impl MonthKey {
    pub fn new(year: i32, month: u32) -> Result<Self, SamplingError> {
        if (1..=12).contains(&month) && NaiveDate::from_ymd_opt(year, month, 1).is_some() {
            Ok(Self { year, month })
        } else {
            Err(SamplingError::BadMonth(format!("{year}-{month}")))
        }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    pub fn of<D: Datelike>(d: &D) -> Self {
        Self { year: d.year(), month: d.month() }
    }

    /// Months since year 0.
    pub fn index(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn months_until(self, later: MonthKey) -> i64 {
        later.index() - self.index()
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self { year: self.year + 1, month: 1 }
        } else {
            Self { year: self.year, month: self.month + 1 }
        }
    }

    pub fn days_in_month(self) -> u32 {
        let first = NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month");
        let n = self.next();
        let next_first = NaiveDate::from_ymd_opt(n.year, n.month, 1).expect("valid month");
        (next_first - first).num_days() as u32
    }

    /// Inclusive range of consecutive months.
    pub fn range(start: MonthKey, end: MonthKey) -> Vec<MonthKey> {
        let mut out = Vec::new();
        let mut m = start;
        while m <= end {
            out.push(m);
            m = m.next();
        }
        out
    }
}

impl fmt::Display for MonthKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthKey {
    type Err = SamplingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SamplingError::BadMonth(s.to_string());
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        MonthKey::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl From<MonthKey> for String {
    fn from(m: MonthKey) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for MonthKey {
    type Error = SamplingError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// One step of the splitmix64 sequence.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn month_rng(seed: u64, month: MonthKey) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(month.index() as u64)))
}

/// Minimum month length holding `k` pairwise non-consecutive days.
pub fn min_days_for(k: u32) -> u32 {
    (2 * k).saturating_sub(1)
}

/// Number of ways to pick `k` pairwise non-consecutive days out of `days`:
/// C(days - k + 1, k).
pub fn count_valid_selections(days: u32, k: u32) -> u64 {
    if days + 1 < k {
        return 0;
    }
    let n = u64::from(days + 1 - k);
    let k = u64::from(k);
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Lowest acceptance rate the rejection sampler is allowed to run at.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

/// Chance that a uniform `k`-subset of `1..=days` has no adjacent days.
pub fn acceptance_probability(days: u32, k: u32) -> f64 {
    let valid = count_valid_selections(days, k) as f64;
    let all = (0..k).fold(1.0, |acc, i| acc * f64::from(days - i) / f64::from(i + 1));
    valid / all
}

fn pairwise_non_consecutive(sorted: &[u32]) -> bool {
    sorted.windows(2).all(|w| w[1] - w[0] >= 2)
}

/// Rejection sampler: uniform `k`-subset of `1..=days`, accepted when no two
/// chosen days are adjacent. Returns the days sorted. Caller guarantees
/// feasibility (`days >= 2k - 1`).
pub fn draw_days<R: Rng + ?Sized>(rng: &mut R, days: u32, k: u32) -> Vec<u32> {
    assert!(k >= 1 && days >= min_days_for(k), "infeasible draw: {k} of {days}");
    loop {
        let mut pick: Vec<u32> = rand::seq::index::sample(rng, days as usize, k as usize)
            .into_iter()
            .map(|i| i as u32 + 1)
            .collect();
        pick.sort_unstable();
        if pairwise_non_consecutive(&pick) {
            return pick;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub month: MonthKey,
    pub days: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub start: MonthKey,
    pub end: MonthKey,
    pub days_per_month: u32,
    pub strata: Vec<Stratum>,
}

pub fn plan_stratified(start: MonthKey, end: MonthKey, days_per_month: u32, seed: u64) -> Result<SamplePlan, SamplingError> {
    if start > end {
        return Err(SamplingError::EmptyRange { start, end });
    }
    let months = MonthKey::range(start, end);
    let need = min_days_for(days_per_month).max(1);
    for &m in &months {
        let days = m.days_in_month();
        if days_per_month == 0 || days < need {
            return Err(SamplingError::Infeasible { month: m, days, k: days_per_month, need });
        }
        let acceptance = acceptance_probability(days, days_per_month);
        if acceptance < MIN_ACCEPTANCE {
            return Err(SamplingError::Impractical { month: m, days, k: days_per_month, acceptance });
        }
    }
    let strata = months
        .into_iter()
        .map(|m| Stratum { month: m, days: draw_days(&mut month_rng(seed, m), m.days_in_month(), days_per_month) })
        .collect();
    Ok(SamplePlan { seed, start, end, days_per_month, strata })
}

impl SamplePlan {
    pub fn days_for(&self, m: MonthKey) -> Option<&[u32]> {
        self.strata.iter().find(|s| s.month == m).map(|s| s.days.as_slice())
    }

    /// Header lines then `YYYY-MM<TAB>d1,d2,d3`.
    pub fn to_text(&self, config_digest: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(d) = config_digest {
            out.push_str(&digest_line(d));
        }
        out.push_str(&format!("# seed={}\n", self.seed));
        out.push_str(&format!("# range={}..{}\n", self.start, self.end));
        out.push_str(&format!("# days_per_month={}\n", self.days_per_month));
        for s in &self.strata {
            let days: Vec<String> = s.days.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{}\t{}\n", s.month, days.join(",")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SamplingError> {
        let mut seed = None;
        let mut range = None;
        let mut k = None;
        let mut strata = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |detail: String| SamplingError::BadPlan { line: i + 1, detail };
            if let Some(h) = line.strip_prefix("# ") {
                if let Some(v) = h.strip_prefix("seed=") {
                    seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?);
                } else if let Some(v) = h.strip_prefix("range=") {
                    let (a, b) = v.split_once("..").ok_or_else(|| bad("range needs START..END".into()))?;
                    range = Some((a.parse::<MonthKey>()?, b.parse::<MonthKey>()?));
                } else if let Some(v) = h.strip_prefix("days_per_month=") {
                    k = Some(v.parse::<u32>().map_err(|e| bad(e.to_string()))?);
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (m, days) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
            let month: MonthKey = m.parse()?;
            let days = days
                .split(',')
                .map(|d| d.parse::<u32>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            if days.iter().any(|&d| d == 0 || d > month.days_in_month()) || !pairwise_non_consecutive(&days) {
                return Err(bad(format!("invalid day set {days:?} for {month}")));
            }
            strata.push(Stratum { month, days });
        }
        let missing = |what: &str| SamplingError::BadPlan { line: 0, detail: format!("missing header {what}") };
        let (start, end) = range.ok_or_else(|| missing("range"))?;
        Ok(SamplePlan {
            seed: seed.ok_or_else(|| missing("seed"))?,
            start,
            end,
            days_per_month: k.ok_or_else(|| missing("days_per_month"))?,
            strata,
        })
    }
}

/// Groups assets by planned month, keeping those posted (UTC day) on a
/// planned day. Every planned month appears, in plan order, even when empty.
pub fn filter_assets_by_plan(assets: &[ImageAsset], plan: &SamplePlan) -> Vec<(MonthKey, Vec<ImageAsset>)> {
    let mut groups: Vec<(MonthKey, Vec<ImageAsset>)> = plan.strata.iter().map(|s| (s.month, Vec::new())).collect();
    for a in assets {
        let m = MonthKey::of(&a.posted_at);
        let day = a.posted_at.day();
        if let Some(pos) = plan.strata.iter().position(|s| s.month == m && s.days.contains(&day)) {
            groups[pos].1.push(a.clone());
        }
    }
    groups
}
