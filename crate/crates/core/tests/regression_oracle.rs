use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proed_core::trend::{f_test_p_value, fit_linear, fit_series, SeriesFit, TrendError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact least squares over the integers. Inputs must lie on the grid
/// `x` integral and `y * 1024` integral; the normal equations are solved with
/// fraction-free (Bareiss) elimination, so coefficients come out as
/// `N_k / D` with a shared denominator `D`.
struct Oracle {
    coefficients: Vec<BigRational>,
    r_squared: Option<f64>,
    rmse: f64,
}

const GRID: i64 = 1024;

fn oracle(points: &[(f64, f64)], degree: usize) -> Oracle {
    let m = degree + 1;
    let xs: Vec<BigInt> = points.iter().map(|p| BigInt::from(p.0 as i64)).collect();
    let ys: Vec<BigInt> = points
        .iter()
        .map(|p| {
            let v = p.1 * GRID as f64;
            assert_eq!(v.fract(), 0.0, "y off the oracle grid");
            BigInt::from(v as i64)
        })
        .collect();
    let powers: Vec<Vec<BigInt>> = xs
        .iter()
        .map(|x| {
            let mut row = vec![BigInt::one()];
            for k in 1..2 * m {
                let next = &row[k - 1] * x;
                row.push(next);
            }
            row
        })
        .collect();
    let mut a = vec![vec![BigInt::zero(); m + 1]; m];
    for (pw, y) in powers.iter().zip(&ys) {
        for i in 0..m {
            for j in 0..m {
                a[i][j] += &pw[i + j];
            }
            a[i][m] += &pw[i] * y;
        }
    }
    let mut prev = BigInt::one();
    for k in 0..m {
        let piv = (k..m).find(|&r| !a[r][k].is_zero()).expect("full rank");
        a.swap(k, piv);
        for i in k + 1..m {
            for j in k + 1..=m {
                let v = (&a[i][j] * &a[k][k] - &a[i][k] * &a[k][j]) / &prev;
                a[i][j] = v;
            }
            a[i][k] = BigInt::zero();
        }
        prev = a[k][k].clone();
    }
    let det = prev;
    let mut num = vec![BigInt::zero(); m];
    for i in (0..m).rev() {
        let mut acc = &det * &a[i][m];
        for j in i + 1..m {
            acc -= &a[i][j] * &num[j];
        }
        assert!((&acc % &a[i][i]).is_zero());
        num[i] = acc / &a[i][i];
    }
    // D * residual_i, in grid units.
    let scaled_resid: Vec<BigInt> = powers
        .iter()
        .zip(&ys)
        .map(|(pw, y)| y * &det - (0..m).map(|k| &num[k] * &pw[k]).sum::<BigInt>())
        .collect();
    let n = BigInt::from(points.len());
    let sse_scaled: BigInt = scaled_resid.iter().map(|r| r * r).sum();
    let sy: BigInt = ys.iter().sum();
    let syy: BigInt = ys.iter().map(|y| y * y).sum();
    let sst_n = &n * syy - &sy * &sy;
    let d2 = &det * &det;
    let r_squared = (!sst_n.is_zero())
        .then(|| f(&(BigRational::one() - BigRational::new(&n * &sse_scaled, &d2 * &sst_n))));
    let sse = BigRational::new(sse_scaled, &d2 * BigInt::from(GRID * GRID));
    let denom = BigRational::from_integer(&det * BigInt::from(GRID));
    Oracle {
        coefficients: num.into_iter().map(|v| BigRational::from_integer(v) / &denom).collect(),
        r_squared,
        rmse: (f(&sse) / points.len() as f64).sqrt(),
    }
}

fn f(v: &BigRational) -> f64 {
    v.to_f64().unwrap()
}

/// Coefficients agree when each term's contribution over the x range agrees.
fn assert_matches(fit: &SeriesFit, o: &Oracle, points: &[(f64, f64)], ctx: &str) {
    let xmax = points.iter().map(|p| p.0.abs()).fold(1.0, f64::max);
    let ymax = points.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    for (k, (got, want)) in fit.coefficients.iter().zip(&o.coefficients).enumerate() {
        let err = (got - f(want)).abs() * xmax.powi(k as i32);
        assert!(err <= 1e-9 * ymax, "{ctx}: c{k} {got} vs {} (scaled error {err})", f(want));
    }
    match (fit.r_squared, o.r_squared) {
        (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9, "{ctx}: r2 {a} vs {b}"),
        (a, b) => assert_eq!(a, b, "{ctx}"),
    }
    assert!((fit.rmse - o.rmse).abs() <= 1e-9 * ymax, "{ctx}: rmse {} vs {}", fit.rmse, o.rmse);
}

fn random_series(rng: &mut ChaCha8Rng, degree: usize) -> Vec<(f64, f64)> {
    let n = rng.random_range(degree + 2..=66);
    let mut x = 0u32;
    (0..n)
        .map(|_| {
            let p = (x as f64, f64::from(rng.random_range(0..102_400u32)) / 1024.0);
            x += if rng.random_bool(0.1) { 2 } else { 1 };
            p
        })
        .collect()
}

#[test]
fn random_series_match_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let degree = rng.random_range(1..=5);
        let pts = random_series(&mut rng, degree);
        let fit = fit_series(&pts, degree).unwrap();
        assert_eq!(fit.degree(), degree);
        assert_eq!(fit.n_points, pts.len());
        assert_matches(&fit, &oracle(&pts, degree), &pts, &format!("series {i} degree {degree}"));
        if degree == 1 {
            let lin = fit_linear(&pts).unwrap();
            for (a, b) in lin.coefficients.iter().zip(&fit.coefficients) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
            assert!((lin.r_squared.unwrap() - fit.r_squared.unwrap()).abs() <= 1e-9);
            assert!((lin.rmse - fit.rmse).abs() <= 1e-9);
        }
    }
}

#[test]
fn linear_path_equals_degree_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for _ in 0..200 {
        let pts = random_series(&mut rng, 1);
        let a = fit_linear(&pts).unwrap();
        let b = fit_series(&pts, 1).unwrap();
        assert_eq!(a.kind, b.kind);
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        assert!((a.r_squared.unwrap() - b.r_squared.unwrap()).abs() <= 1e-9);
        assert!((a.rmse - b.rmse).abs() <= 1e-9);
        assert!((a.p_value.unwrap() - b.p_value.unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn residuals_are_orthogonal_to_powers() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..100 {
        let degree = rng.random_range(1..=5);
        let pts = random_series(&mut rng, degree);
        let fit = fit_series(&pts, degree).unwrap();
        for k in 0..=degree as i32 {
            let s: f64 = pts.iter().map(|&(x, y)| (y - fit.predict(x)) * x.powi(k)).sum();
            let scale: f64 = pts.iter().map(|&(x, y)| (y.abs() + 1.0) * x.abs().powi(k)).sum::<f64>().max(1.0);
            assert!((s / scale).abs() < 1e-6, "k={k}: {s} / {scale}");
        }
    }
}

#[test]
fn duplicating_fitted_points_never_lowers_r_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..100 {
        let degree = rng.random_range(1..=4);
        let pts = random_series(&mut rng, degree);
        let fit = fit_series(&pts, degree).unwrap();
        let mut more = pts.clone();
        more.extend(pts.iter().map(|&(x, _)| (x, fit.predict(x))));
        let refit = fit_series(&more, degree).unwrap();
        assert!(refit.r_squared.unwrap() >= fit.r_squared.unwrap() - 1e-12);
    }
}

#[test]
fn exact_fits() {
    for n in 3..10 {
        let pts: Vec<_> = (0..n).map(|x| (x as f64, 2.0 * x as f64 + 1.0)).collect();
        let fit = fit_series(&pts, 1).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12 && (fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert!(fit.rmse < 1e-12);
    }
    let cubic: Vec<_> = (0..12).map(|x| {
        let x = x as f64;
        (x, 1.0 - x + 0.5 * x * x - 0.01 * x * x * x)
    }).collect();
    let fit = fit_series(&cubic, 3).unwrap();
    assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
    assert!(fit.rmse < 1e-9);
}

#[test]
fn three_point_derived_example() {
    let pts = [(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)];
    let fit = fit_series(&pts, 1).unwrap();
    assert!((fit.coefficients[0] - 7.0 / 6.0).abs() < 1e-12);
    assert!((fit.coefficients[1] - 0.5).abs() < 1e-12);
    assert!((fit.r_squared.unwrap() - 0.75).abs() < 1e-12);
    assert!((fit.rmse - (1.0f64 / 18.0).sqrt()).abs() < 1e-12);
    assert_eq!(fit_series(&pts[..2], 1).unwrap_err(), TrendError::InsufficientPoints { degree: 1, n: 2, needed: 3 });
}

#[test]
fn constant_series_reports_absent_r_squared() {
    let pts: Vec<_> = (0..8).map(|x| (x as f64, 4.5)).collect();
    let fit = fit_series(&pts, 2).unwrap();
    assert_eq!(fit.r_squared, None);
    assert_eq!(fit.p_value, None);
    assert_eq!(fit.warnings.len(), 1);
}

/// (F, df1, df2, upper-tail probability) from an independent statistics library.
#[allow(clippy::excessive_precision)]
pub const F_TABLE: [(f64, f64, f64, f64); 20] = [
    (1.0, 1.0, 10.0, 3.40893132302059754e-01),
    (2.5, 1.0, 64.0, 1.18776206723708783e-01),
    (10.0, 1.0, 64.0, 2.39356619584723141e-03),
    (0.5, 2.0, 20.0, 6.13913253540759096e-01),
    (3.2, 2.0, 30.0, 5.49918165561537817e-02),
    (4.0, 3.0, 50.0, 1.25057131249422492e-02),
    (1.2, 4.0, 61.0, 3.20029268288547053e-01),
    (7.5, 4.0, 61.0, 5.56357683813764957e-05),
    (0.1, 5.0, 60.0, 9.91743182001622592e-01),
    (2.2, 5.0, 20.0, 9.48094071713108666e-02),
    (15.0, 1.0, 5.0, 1.17248110039546386e-02),
    (0.9, 3.0, 12.0, 4.69594558483723001e-01),
    (5.5, 2.0, 63.0, 6.28677816701274199e-03),
    (1.0, 1.0, 1.0, 5.00000000000000111e-01),
    (3.0, 6.0, 7.0, 8.83087680020792493e-02),
    (0.25, 1.0, 30.0, 6.20723004885127772e-01),
    (12.0, 4.0, 40.0, 1.68820426864301576e-06),
    (1.75, 5.0, 100.0, 1.30167561047695612e-01),
    (6.0, 2.0, 8.0, 2.56000000000000047e-02),
    (2.0, 3.0, 3.0, 2.91791405790928882e-01),
];

#[test]
fn f_test_reference_table() {
    for (fv, d1, d2, want) in F_TABLE {
        let got = f_test_p_value(fv, d1, d2);
        assert!((got - want).abs() <= 1e-6, "F({d1},{d2})={fv}: {got} vs {want}");
    }
}

#[test]
fn strong_trend_is_significant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<_> = (0..66).map(|x| (x as f64, 2.0 + 0.05 * x as f64 + rng.random_range(-0.5..0.5))).collect();
    for fit in [fit_linear(&pts).unwrap(), fit_series(&pts, 4).unwrap()] {
        assert!(fit.p_value.unwrap() < 0.001);
        assert!(fit.p_value.unwrap() >= 0.0);
    }
    let exact: Vec<_> = (0..10).map(|x| (x as f64, x as f64)).collect();
    let fit = fit_linear(&exact).unwrap();
    assert_eq!(fit.p_value, Some(0.0));
}
