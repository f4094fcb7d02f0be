//! Monthly prevalence series and polynomial trend fits.
//!
//! Sampled images are classified by the selected checkpoint, counted per
//! month, and turned into a percent-Pro-ED series. The series is fit with an
//! ordinary least squares polynomial in `x = months since the first month`,
//! with coefficients reported in ascending powers of `x`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::dataset::Label;
use crate::ingest::{ImageAsset, ImageLoader};
use crate::io::digest_line;
use crate::sampling::MonthKey;
use crate::training::Predict;

pub const DEFAULT_DEGREE: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrendError {
    #[error("degree {0} is not supported (must be >= 1)")]
    BadDegree(usize),
    #[error("a degree-{degree} fit needs at least {needed} months with data, got {n}")]
    InsufficientPoints { degree: usize, n: usize, needed: usize },
    #[error("design matrix is rank deficient (too few distinct months for degree {0})")]
    Singular(usize),
}

/// Per-image predictions for one sampled month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthLabels {
    pub month: MonthKey,
    pub labels: Vec<(String, Label)>,
    pub undecodable: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyAggregate {
    pub month: MonthKey,
    pub n_images: u64,
    pub n_pro_ed: u64,
    /// `None` when the month has no classified images.
    pub percent_pro_ed: Option<f64>,
}

/// Classifies every asset in every group. Images that fail to load are
/// listed per month and left out of the counts.
pub fn classify_batch<P: Predict + Sync>(
    model: &P,
    groups: &[(MonthKey, Vec<ImageAsset>)],
    loader: &dyn ImageLoader,
) -> Vec<MonthLabels> {
    groups
        .iter()
        .map(|(month, assets)| {
            let results: Vec<_> = assets.par_iter().map(|a| loader.load(&a.asset_id).map(|img| model.predict(&img))).collect();
            let mut labels = Vec::new();
            let mut undecodable = Vec::new();
            for (a, r) in assets.iter().zip(results) {
                match r {
                    Ok(l) => labels.push((a.asset_id.clone(), l)),
                    Err(e) => {
                        log::warn!("skipping {} in {month}: {e}", a.asset_id);
                        undecodable.push(a.asset_id.clone());
                    }
                }
            }
            MonthLabels { month: *month, labels, undecodable }
        })
        .collect()
}

pub fn aggregate_monthly(months: &[MonthLabels]) -> Vec<MonthlyAggregate> {
    let mut out: Vec<MonthlyAggregate> = months
        .iter()
        .map(|m| {
            let n_images = m.labels.len() as u64;
            let n_pro_ed = m.labels.iter().filter(|(_, l)| *l == Label::ProEd).count() as u64;
            MonthlyAggregate {
                month: m.month,
                n_images,
                n_pro_ed,
                percent_pro_ed: (n_images > 0).then(|| 100.0 * n_pro_ed as f64 / n_images as f64),
            }
        })
        .collect();
    out.sort_by_key(|a| a.month);
    out
}

/// `(x, percent)` for months with data; `x` counts months from the first
/// aggregate, so gaps keep their calendar spacing.
pub fn series_points(aggs: &[MonthlyAggregate]) -> Vec<(f64, f64)> {
    let Some(first) = aggs.iter().map(|a| a.month).min() else {
        return Vec::new();
    };
    aggs.iter()
        .filter_map(|a| a.percent_pro_ed.map(|p| (first.months_until(a.month) as f64, p)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitKind {
    Linear,
    Polynomial { degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub kind: FitKind,
    /// Ascending powers of x.
    pub coefficients: Vec<f64>,
    pub n_points: usize,
    /// `None` when the observations have zero variance.
    pub r_squared: Option<f64>,
    pub rmse: f64,
    pub f_statistic: Option<f64>,
    /// Overall F-test of the fit against an intercept-only model.
    pub p_value: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SeriesFit {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

fn check_points(points: &[(f64, f64)], degree: usize) -> Result<(), TrendError> {
    if degree == 0 {
        return Err(TrendError::BadDegree(degree));
    }
    let needed = degree + 2;
    if points.len() < needed {
        return Err(TrendError::InsufficientPoints { degree, n: points.len(), needed });
    }
    Ok(())
}

fn summarize(kind: FitKind, coefficients: Vec<f64>, points: &[(f64, f64)]) -> SeriesFit {
    let n = points.len();
    let p = coefficients.len() - 1;
    let mut fit = SeriesFit { kind, coefficients, n_points: n, r_squared: None, rmse: 0.0, f_statistic: None, p_value: None, warnings: Vec::new() };
    let mean = points.iter().map(|&(_, y)| y).sum::<f64>() / n as f64;
    let sst: f64 = points.iter().map(|&(_, y)| (y - mean).powi(2)).sum();
    let sse: f64 = points.iter().map(|&(x, y)| (y - fit.predict(x)).powi(2)).sum();
    fit.rmse = (sse / n as f64).sqrt();
    if sst == 0.0 {
        fit.warnings.push("observations are constant; r_squared and p_value are undefined".into());
    } else {
        let sse = sse.min(sst);
        fit.r_squared = Some(1.0 - sse / sst);
        let df1 = p as f64;
        let df2 = (n - p - 1) as f64;
        if sse == 0.0 {
            fit.f_statistic = Some(f64::INFINITY);
            fit.p_value = Some(0.0);
        } else {
            let f = ((sst - sse) / df1) / (sse / df2);
            fit.f_statistic = Some(f);
            fit.p_value = Some(f_test_p_value(f, df1, df2));
        }
    }
    fit
}

/// Upper-tail probability of an F(df1, df2) statistic.
pub fn f_test_p_value(f: f64, df1: f64, df2: f64) -> f64 {
    FisherSnedecor::new(df1, df2).expect("positive degrees of freedom").sf(f)
}

/// Closed-form simple linear regression.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<SeriesFit, TrendError> {
    check_points(points, 1)?;
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(TrendError::Singular(1));
    }
    let slope = sxy / sxx;
    Ok(summarize(FitKind::Linear, vec![my - slope * mx, slope], points))
}

/// Least squares polynomial fit of the given degree.
///
/// Householder QR on the column-scaled Vandermonde matrix, followed by one
/// step of iterative refinement on the residual.
pub fn fit_series(points: &[(f64, f64)], degree: usize) -> Result<SeriesFit, TrendError> {
    check_points(points, degree)?;
    let n = points.len();
    let m = degree + 1;
    let mut a = vec![vec![0.0; m]; n];
    for (row, &(x, _)) in a.iter_mut().zip(points) {
        let mut v = 1.0;
        for cell in row.iter_mut() {
            *cell = v;
            v *= x;
        }
    }
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let s = a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    for row in a.iter_mut() {
        for (c, s) in row.iter_mut().zip(&scale) {
            *c /= s;
        }
    }
    let qr = Householder::new(a.clone(), degree)?;
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut c = qr.solve(&y);
    let resid: Vec<f64> = a.iter().zip(&y).map(|(row, yi)| yi - dot(row, &c)).collect();
    let delta = qr.solve(&resid);
    for (ci, d) in c.iter_mut().zip(delta) {
        *ci += d;
    }
    let coefficients: Vec<f64> = c.iter().zip(&scale).map(|(ci, s)| ci / s).collect();
    let kind = if degree == 1 { FitKind::Linear } else { FitKind::Polynomial { degree } };
    Ok(summarize(kind, coefficients, points))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Householder {
    /// Reflected matrix: R in the upper triangle, reflectors below.
    qr: Vec<Vec<f64>>,
    vs: Vec<Vec<f64>>,
    m: usize,
}

impl Householder {
    fn new(mut a: Vec<Vec<f64>>, degree: usize) -> Result<Self, TrendError> {
        let n = a.len();
        let m = a[0].len();
        let mut vs = Vec::with_capacity(m);
        for k in 0..m {
            let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(TrendError::Singular(degree));
            }
            let alpha = if a[k][k] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            for j in k..m {
                let s = 2.0 * (k..n).map(|i| v[i - k] * a[i][j]).sum::<f64>() / vnorm2;
                for i in k..n {
                    a[i][j] -= s * v[i - k];
                }
            }
            if a[k][k].abs() < 1e-10 {
                return Err(TrendError::Singular(degree));
            }
            vs.push(v);
        }
        Ok(Self { qr: a, vs, m })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut qtb = b.to_vec();
        for (k, v) in self.vs.iter().enumerate() {
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            let s = 2.0 * (k..n).map(|i| v[i - k] * qtb[i]).sum::<f64>() / vnorm2;
            for i in k..n {
                qtb[i] -= s * v[i - k];
            }
        }
        let mut c = vec![0.0; self.m];
        for k in (0..self.m).rev() {
            let tail: f64 = (k + 1..self.m).map(|j| self.qr[k][j] * c[j]).sum();
            c[k] = (qtb[k] - tail) / self.qr[k][k];
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalEntry {
    pub mean_percent: f64,
    pub years_contributing: usize,
}

/// Mean percent per calendar month, pooled across years.
pub fn seasonal_profile(aggs: &[MonthlyAggregate]) -> [Option<SeasonalEntry>; 12] {
    let mut acc = [(0.0, 0usize); 12];
    for a in aggs {
        if let Some(p) = a.percent_pro_ed {
            let slot = &mut acc[a.month.month() as usize - 1];
            slot.0 += p;
            slot.1 += 1;
        }
    }
    acc.map(|(sum, k)| (k > 0).then(|| SeasonalEntry { mean_percent: sum / k as f64, years_contributing: k }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearStats {
    pub mean_percent: f64,
    /// Sample standard deviation; absent with fewer than two months.
    pub std_percent: Option<f64>,
    pub months: usize,
}

pub fn yearly_stats(aggs: &[MonthlyAggregate]) -> BTreeMap<i32, YearStats> {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for a in aggs {
        if let Some(p) = a.percent_pro_ed {
            by_year.entry(a.month.year()).or_default().push(p);
        }
    }
    by_year
        .into_iter()
        .map(|(year, v)| {
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            let std = (v.len() > 1).then(|| (v.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt());
            (year, YearStats { mean_percent: mean, std_percent: std, months: v.len() })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn header(config_digest: Option<&str>) -> String {
    config_digest.map(digest_line).unwrap_or_default()
}

pub const SERIES_HEADER: &str = "year,month,n_images,n_pro_ed,percent";
pub const PROFILE_HEADER: &str = "calendar_month,mean_percent,years_contributing";
pub const FIT_HEADER: &str = "x,year,month,observed_percent,fitted_percent";

/// Monthly series; months without classified images have an empty percent.
pub fn series_csv(aggs: &[MonthlyAggregate], config_digest: Option<&str>) -> String {
    let mut out = header(config_digest);
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for a in aggs {
        out.push_str(&format!("{},{},{},{},{}\n", a.month.year(), a.month.month(), a.n_images, a.n_pro_ed, opt(a.percent_pro_ed)));
    }
    out
}

pub fn profile_csv(profile: &[Option<SeasonalEntry>; 12], config_digest: Option<&str>) -> String {
    let mut out = header(config_digest);
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for (i, e) in profile.iter().enumerate() {
        match e {
            Some(e) => out.push_str(&format!("{},{},{}\n", i + 1, e.mean_percent, e.years_contributing)),
            None => out.push_str(&format!("{},,0\n", i + 1)),
        }
    }
    out
}

/// Observed and fitted values per month, preceded by the fit summary as
/// comment lines.
pub fn fit_csv(aggs: &[MonthlyAggregate], fit: &SeriesFit, config_digest: Option<&str>) -> String {
    let mut out = header(config_digest);
    let coeffs: Vec<String> = fit.coefficients.iter().map(|c| c.to_string()).collect();
    out.push_str(&format!("# degree={}\n", fit.degree()));
    out.push_str(&format!("# coefficients={}\n", coeffs.join(";")));
    out.push_str(&format!("# r_squared={}\n", opt(fit.r_squared)));
    out.push_str(&format!("# rmse={}\n", fit.rmse));
    out.push_str(&format!("# p_value={}\n", opt(fit.p_value)));
    out.push_str(FIT_HEADER);
    out.push('\n');
    let Some(first) = aggs.iter().map(|a| a.month).min() else {
        return out;
    };
    for a in aggs {
        let x = first.months_until(a.month);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            x,
            a.month.year(),
            a.month.month(),
            opt(a.percent_pro_ed),
            fit.predict(x as f64)
        ));
    }
    out
}

/// Everything the trend stage persists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub aggregates: Vec<MonthlyAggregate>,
    pub linear: SeriesFit,
    pub polynomial: SeriesFit,
    pub seasonal: [Option<SeasonalEntry>; 12],
    pub yearly: BTreeMap<i32, YearStats>,
}

pub fn analyze(aggs: &[MonthlyAggregate], degree: usize) -> Result<TrendReport, TrendError> {
    let points = series_points(aggs);
    Ok(TrendReport {
        aggregates: aggs.to_vec(),
        linear: fit_linear(&points)?,
        polynomial: fit_series(&points, degree)?,
        seasonal: seasonal_profile(aggs),
        yearly: yearly_stats(aggs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(y: i32, m: u32, n: u64, k: u64) -> MonthlyAggregate {
        MonthlyAggregate {
            month: MonthKey::new(y, m).unwrap(),
            n_images: n,
            n_pro_ed: k,
            percent_pro_ed: (n > 0).then(|| 100.0 * k as f64 / n as f64),
        }
    }

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<_> = (0..10).map(|x| (x as f64, 2.0 + 0.5 * x as f64)).collect();
        for fit in [fit_linear(&pts).unwrap(), fit_series(&pts, 1).unwrap()] {
            assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
            assert!((fit.coefficients[1] - 0.5).abs() < 1e-12);
            assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
            assert!(fit.rmse < 1e-12);
        }
    }

    #[test]
    fn quartic_recovered() {
        let c = [5.0, -0.3, 0.02, -4e-4, 2e-6];
        let pts: Vec<_> = (0..66).map(|x| {
            let x = x as f64;
            (x, c.iter().rev().fold(0.0, |a, ci| a * x + ci))
        }).collect();
        let fit = fit_series(&pts, 4).unwrap();
        for (k, (got, want)) in fit.coefficients.iter().zip(c).enumerate() {
            assert!((got - want).abs() * 65f64.powi(k as i32) < 1e-8, "c{k}: {got} vs {want}");
        }
    }

    #[test]
    fn constant_series_has_no_r_squared() {
        let pts: Vec<_> = (0..6).map(|x| (x as f64, 3.0)).collect();
        let fit = fit_linear(&pts).unwrap();
        assert_eq!(fit.r_squared, None);
        assert_eq!(fit.p_value, None);
        assert_eq!(fit.rmse, 0.0);
    }

    #[test]
    fn too_few_points() {
        let pts: Vec<_> = (0..5).map(|x| (x as f64, x as f64)).collect();
        assert_eq!(fit_series(&pts, 4), Err(TrendError::InsufficientPoints { degree: 4, n: 5, needed: 6 }));
        assert!(fit_series(&pts, 3).is_ok());
        let dup = vec![(1.0, 1.0), (1.0, 2.0), (1.0, 3.0), (2.0, 0.0)];
        assert_eq!(fit_series(&dup, 2), Err(TrendError::Singular(2)));
    }

    #[test]
    fn gaps_keep_calendar_spacing() {
        let aggs = vec![agg(2020, 1, 4, 1), agg(2020, 2, 0, 0), agg(2020, 4, 2, 2)];
        assert_eq!(series_points(&aggs), vec![(0.0, 25.0), (3.0, 100.0)]);
        let csv = series_csv(&aggs, Some("ab"));
        assert_eq!(csv, "# config_digest=ab\nyear,month,n_images,n_pro_ed,percent\n2020,1,4,1,25\n2020,2,0,0,\n2020,4,2,2,100\n");
    }

    #[test]
    fn seasonal_and_yearly() {
        let aggs = vec![agg(2020, 1, 4, 1), agg(2021, 1, 4, 3), agg(2021, 2, 2, 1)];
        let prof = seasonal_profile(&aggs);
        assert_eq!(prof[0], Some(SeasonalEntry { mean_percent: 50.0, years_contributing: 2 }));
        assert_eq!(prof[1].unwrap().years_contributing, 1);
        assert!(prof[2].is_none());
        let y = yearly_stats(&aggs);
        assert_eq!(y[&2020].std_percent, None);
        assert_eq!(y[&2021].mean_percent, 62.5);
        assert!((y[&2021].std_percent.unwrap() - (312.5f64).sqrt()).abs() < 1e-12);
        let csv = profile_csv(&prof, None);
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.contains("\n3,,0\n"));
    }

    #[test]
    fn aggregation_counts() {
        let m = MonthKey::new(2019, 5).unwrap();
        let labels = MonthLabels {
            month: m,
            labels: vec![("a".into(), Label::ProEd), ("b".into(), Label::NotProEd), ("c".into(), Label::ProEd), ("d".into(), Label::NotProEd)],
            undecodable: vec!["e".into()],
        };
        let a = aggregate_monthly(&[labels]);
        assert_eq!(a[0].n_images, 4);
        assert_eq!(a[0].percent_pro_ed, Some(50.0));
    }
}
