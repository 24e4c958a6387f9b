use std::f64::consts::PI;

use ergodic_core::function_semiflows::{
    characteristics_solve, geometric_grid, invariance_test, isomorphism_residual,
    mixing_correlation, sample_invariant_field, sample_ou, tube_positivity_check, FunctionSample,
    GeneralSemiflow, InvarianceConfig, LinearMaturitySemiflow, Reaction, Semiflow, Threshold,
    VelocityField,
};

/// Sample mean of `xs` and its standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn column(paths: &[FunctionSample], k: usize) -> Vec<f64> {
    paths.iter().map(|p| p.values()[k]).collect()
}

/// Checks E[a b] against `expected` (the fields are centered).
fn assert_cov(a: &[f64], b: &[f64], expected: f64) {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (m, se) = mean_se(&prod);
    assert!(
        (m - expected).abs() < 3.0 * se,
        "cov {m} vs {expected} (se {se})"
    );
}

#[test]
fn invariant_field_covariances() {
    let grid = vec![0.0, 0.3, 0.5, 0.8, 1.0];
    for lambda in [0.5, 1.0, 2.0] {
        let paths = sample_invariant_field(lambda, &grid, 10_000, 17).unwrap();
        for i in 1..grid.len() {
            for j in i..grid.len() {
                let expected = grid[i].min(grid[j]).powf(2.0 * lambda);
                assert_cov(&column(&paths, i), &column(&paths, j), expected);
            }
        }
    }
    let paths = sample_invariant_field(1.0, &grid, 10_000, 3).unwrap();
    let x1 = column(&paths, 4);
    assert_cov(&x1, &x1, 1.0);
    let xh = column(&paths, 2);
    assert_cov(&xh, &xh, 0.25);
}

#[test]
fn ou_covariance_and_autocorrelation() {
    let dt = 0.2;
    let grid: Vec<f64> = (0..30).map(|k| k as f64 * dt).collect();
    let paths = sample_ou(&grid, 10_000, 5).unwrap();
    for k in [0usize, 7, 29] {
        let c = column(&paths, k);
        assert_cov(&c, &c, 1.0);
    }
    let base = column(&paths, 3);
    for lag in 1..=8 {
        let other = column(&paths, 3 + lag);
        assert_cov(&base, &other, (-(lag as f64) * dt).exp());
    }
    let single = sample_ou(&[4.0], 10_000, 6).unwrap();
    let c = column(&single, 0);
    let (m, se) = mean_se(&c);
    assert!(m.abs() < 3.0 * se);
    assert_cov(&c, &c, 1.0);
}

#[test]
fn pushforward_variance_identity() {
    for lambda in [0.5f64, 1.0, 3.0] {
        for t in [0.1f64, 0.7, 2.0] {
            for x in [0.1f64, 0.5, 1.0] {
                let lhs = (2.0 * lambda * t).exp() * ((-t).exp() * x).powf(2.0 * lambda);
                assert!((lhs - x.powf(2.0 * lambda)).abs() < 1e-12 * x.powf(2.0 * lambda).max(1.0));
            }
        }
    }
    let (lambda, t) = (1.0, 0.6_f64);
    let back = (-t).exp();
    let grid = vec![0.0, back * 0.5, 0.5, back, 1.0];
    let sf = LinearMaturitySemiflow::new(lambda).unwrap();
    let moved: Vec<FunctionSample> = sample_invariant_field(lambda, &grid, 10_000, 8)
        .unwrap()
        .iter()
        .map(|p| sf.apply(p, t).unwrap())
        .collect();
    for (k, x) in [(2usize, 0.5f64), (4, 1.0)] {
        let c = column(&moved, k);
        assert_cov(&c, &c, x.powf(2.0 * lambda));
    }
}

#[test]
fn invariance_verdicts() {
    let cfg = InvarianceConfig {
        lambda: 1.0,
        t: 0.5,
        n_samples: 10_000,
        probes: vec![0.25, 0.5, 1.0],
        corrupt_prefactor: false,
    };
    assert!(invariance_test(&cfg, 1).unwrap().invariant);
    let zero = InvarianceConfig {
        t: 0.0,
        ..cfg.clone()
    };
    assert!(invariance_test(&zero, 2).unwrap().invariant);
    let bad = InvarianceConfig {
        corrupt_prefactor: true,
        ..cfg
    };
    let r = invariance_test(&bad, 3).unwrap();
    assert!(!r.invariant);
    let at_one = r.probes.iter().find(|p| p.probe == 1.0).unwrap();
    assert!(!at_one.verdict);
}

fn above(x: f64) -> Vec<Threshold> {
    vec![Threshold {
        x,
        level: 0.0,
        above: true,
    }]
}

/// `P(X > 0, Y > 0) − 1/4` for a centered bivariate normal with
/// correlation `rho`.
fn orthant_gap(rho: f64) -> f64 {
    rho.asin() / (2.0 * PI)
}

#[test]
fn mixing_gaps() {
    let r = mixing_correlation(1.0, &above(1.0), &above(1.0), &[0.0, 5.0], 100_000, 7).unwrap();
    assert!((r[0].gap - r[0].p_a * (1.0 - r[0].p_a)).abs() < 1e-12);
    assert!((r[0].gap - 0.25).abs() < 0.01);
    assert!(r[1].gap < 3.0 * r[1].standard_error, "{:?}", r[1]);

    // Correlation of xi(1) and xi(0.01) is 0.01^lambda.
    let r = mixing_correlation(1.0, &above(1.0), &above(0.01), &[0.0], 100_000, 8).unwrap();
    let oracle = orthant_gap(0.01);
    assert!(
        (r[0].difference - oracle).abs() < 3.0 * r[0].standard_error,
        "{:?} vs {oracle}",
        r[0]
    );
}

/// Probability that Brownian motion started at `y` stays in `(-l, l)` for
/// time `tau` (eigenfunction series of the Dirichlet heat kernel).
fn stay_probability(y: f64, l: f64, tau: f64) -> f64 {
    (0..200)
        .map(|j| {
            let k = (2 * j + 1) as f64;
            4.0 / (k * PI)
                * (k * PI * (y + l) / (2.0 * l)).sin()
                * (-k * k * PI * PI * tau / (8.0 * l * l)).exp()
        })
        .sum()
}

/// `P(|w_s| < l for s in [a, b])` by Simpson quadrature of the series
/// against the law of `w_a`.
fn tube_oracle(l: f64, a: f64, b: f64) -> f64 {
    let m = 4000;
    let h = 2.0 * l / m as f64;
    (0..=m)
        .map(|i| {
            let y = -l + i as f64 * h;
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let dens = (-y * y / (2.0 * a)).exp() / (2.0 * PI * a).sqrt();
            w * dens * stay_probability(y, l, b - a)
        })
        .sum::<f64>()
        * h
        / 3.0
}

#[test]
fn tube_probability_matches_series_oracle() {
    let oracle = tube_oracle(2.0, 0.5, 1.0);
    assert!((oracle - 0.9).abs() < 0.02, "oracle {oracle}");
    let grid: Vec<f64> = (0..=2000).map(|k| 0.5 + 0.5 * k as f64 / 2000.0).collect();
    let lo = FunctionSample::from_fn(grid.clone(), |_| -2.0).unwrap();
    let hi = FunctionSample::from_fn(grid, |_| 2.0).unwrap();
    let r = tube_positivity_check(&lo, &hi, 10_000, 12).unwrap();
    assert!((r.probability - oracle).abs() < 0.02, "{r:?} vs {oracle}");
}

#[test]
fn general_isomorphism_residual_tracks_tolerance() {
    let grid = geometric_grid(8001, 1e-9).unwrap();
    let v = FunctionSample::from_fn(grid, |x| x.sin()).unwrap();
    let s_grid: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
    let mut residuals = Vec::new();
    for tol in [1e-4, 1e-5, 1e-6] {
        let sf = GeneralSemiflow::new(VelocityField::linear(1.0), Reaction::linear(1.0), 0.0, tol)
            .unwrap();
        let r = isomorphism_residual(&sf, &v, 0.7, &s_grid).unwrap();
        assert!(r < 10.0 * tol, "tol {tol}: residual {r}");
        residuals.push(r);
    }
    let slope = (residuals[0] / residuals[2]).log10() / 2.0;
    assert!((0.7..=1.3).contains(&slope), "residuals {residuals:?}");

    let sf =
        GeneralSemiflow::new(VelocityField::linear(1.0), Reaction::linear(1.0), 0.0, 1e-6).unwrap();
    let linear = LinearMaturitySemiflow::new(1.0).unwrap();
    let a = characteristics_solve(&sf, &v, 1.5).unwrap();
    let b = linear.apply(&v, 1.5).unwrap();
    assert!(a.sup_distance(&b).unwrap() < 1e-5);
}
