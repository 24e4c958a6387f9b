use std::f64::consts::PI;

use ergodic_core::interval_dynamics::{Interval, PiecewiseMap};
use ergodic_core::open_systems::{
    build_open_ulam, conditional_density, power_iteration_open, support_boxes, survival_fraction,
};
use ergodic_core::transfer_operators::{
    apply, build_ulam, invariant_density, random_smooth_densities, DensityVector,
    DEFAULT_SAMPLES_PER_CELL, ROW_SUM_TOLERANCE,
};
use proptest::prelude::*;

fn arcsine_cdf(x: f64) -> f64 {
    2.0 / PI * x.clamp(0.0, 1.0).sqrt().asin()
}

fn logistic_l1_to_arcsine(n: usize) -> f64 {
    let p = build_ulam(&PiecewiseMap::logistic(), n, DEFAULT_SAMPLES_PER_CELL, 7).unwrap();
    let r = invariant_density(&p, 1e-10, 20_000).unwrap();
    let g = p.grid();
    let w = g.cell_width();
    let cell_avg: Vec<f64> = (0..g.n)
        .map(|j| (arcsine_cdf(g.boundary(j + 1)) - arcsine_cdf(g.boundary(j))) / w)
        .collect();
    r.density.l1_distance(&cell_avg)
}

/// The Ulam density converges to the arcsine law; the error is dominated by
/// the singular endpoints and decays roughly like log(n)/n.
#[test]
fn logistic_invariant_density_converges_to_arcsine() {
    let errors: Vec<f64> = [256, 1024, 4096]
        .iter()
        .map(|&n| logistic_l1_to_arcsine(n))
        .collect();
    assert!(
        errors[0] < 0.08 && errors[1] < 0.045 && errors[2] < 0.025,
        "{errors:?}"
    );
    assert!(
        errors[1] < 0.6 * errors[0] && errors[2] < 0.6 * errors[1],
        "{errors:?}"
    );
}

/// The arcsine density is a fixed point of the explicit Frobenius–Perron
/// operator of the logistic map.
#[test]
fn arcsine_is_fixed_by_explicit_transfer_operator() {
    let f = |x: f64| 1.0 / (PI * (x * (1.0 - x)).sqrt());
    for k in 1..100 {
        let x = k as f64 / 100.0;
        let r = (1.0 - x).sqrt();
        let pf = (f(0.5 * (1.0 - r)) + f(0.5 * (1.0 + r))) / (4.0 * r);
        assert!((pf - f(x)).abs() < 1e-10 * f(x), "x {x}");
    }
}

#[test]
fn tent_invariant_density_is_uniform() {
    let p = build_ulam(&PiecewiseMap::tent(2.0).unwrap(), 300, 10, 0).unwrap();
    let r = invariant_density(&p, 1e-12, 1000).unwrap();
    assert!(r.density.l1_distance(&vec![1.0; 300]) < 1e-9);
}

/// Cells `[k/3^d, (k+1)/3^d]` that survive `d` steps of the c = 3 tent:
/// built by pulling `[0, 1]` back through both branches `d` times.
fn survivor_intervals(depth: u32) -> Vec<(f64, f64)> {
    let mut set: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (a, b) in set {
            next.push((a / 3.0, b / 3.0));
            next.push((1.0 - b / 3.0, 1.0 - a / 3.0));
        }
        set = next;
    }
    set.sort_by(|x, y| x.0.total_cmp(&y.0));
    set
}

#[test]
fn cantor_support_matches_brute_force_enumeration() {
    let n = 243;
    let p = build_open_ulam(&PiecewiseMap::tent(3.0).unwrap(), n, 10, 0).unwrap();
    let t = power_iteration_open(&p, 1e-13, 1000).unwrap();
    let boxes = support_boxes(&t.nu, p.grid(), 1e-9);
    let survivors = survivor_intervals(5);
    assert_eq!(survivors.len(), 32);
    let w = p.grid().cell_width();
    for j in 0..n {
        let mid = p.grid().center(j);
        let survives = survivors.iter().any(|(a, b)| mid > *a && mid < *b);
        assert_eq!(boxes.contains_point(mid), survives, "cell {j}");
        if survives {
            assert!(survivors
                .iter()
                .any(|(a, b)| (b - a - w).abs() < 1e-12 && mid > *a && mid < *b));
        }
    }
    assert!(
        t.nu_of(Interval {
            lo: 1.0 / 3.0,
            hi: 2.0 / 3.0
        }) < 1e-6
    );
    for depth in 1..=4 {
        let len = 3f64.powi(-depth);
        let k_max = 3usize.pow(depth as u32 - 1);
        for k in 0..k_max {
            let a = (3 * k + 1) as f64 * len;
            let gap = Interval { lo: a, hi: a + len };
            let inside_cantor_gap = !survivor_intervals(depth as u32)
                .iter()
                .any(|(x, y)| gap.lo >= *x - 1e-12 && gap.hi <= *y + 1e-12);
            if inside_cantor_gap {
                assert!(t.nu_of(gap) < 1e-6);
            }
        }
    }
}

#[test]
fn escape_factor_examples() {
    for (c, n) in [(3.0, 2187usize), (4.0, 4096), (2.5, 3125)] {
        let p = build_open_ulam(&PiecewiseMap::tent(c).unwrap(), n, 10, 0).unwrap();
        let t = power_iteration_open(&p, 1e-10, 5000).unwrap();
        assert!((t.lambda - 2.0 / c).abs() < 1e-3, "c {c}: {}", t.lambda);
        assert!((t.escape_rate() - (c / 2.0).ln()).abs() < 2e-3);
    }
}

#[test]
fn escape_factor_is_scale_robust() {
    let tent = PiecewiseMap::tent(3.0).unwrap();
    let mut last: Option<f64> = None;
    for k in 4..=7 {
        let p = build_open_ulam(&tent, 3usize.pow(k), 10, 0).unwrap();
        let l = power_iteration_open(&p, 1e-10, 1000).unwrap().lambda;
        if let Some(prev) = last {
            assert!((l - prev).abs() < 1e-3);
        }
        last = Some(l);
    }
}

#[test]
fn conditional_densities_are_densities() {
    let p = build_open_ulam(&PiecewiseMap::tent(2.5).unwrap(), 625, 10, 0).unwrap();
    for f in random_smooth_densities(p.grid(), 5, 3) {
        let mut last = 1.0;
        for k in 0..25 {
            let s = survival_fraction(&p, &f, k).unwrap();
            assert!(s <= last && s >= 0.0);
            last = s;
            let c = conditional_density(&p, &f, k).unwrap();
            assert!((c.mass() - 1.0).abs() < 1e-10);
            assert!(c.values().iter().all(|v| *v >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ulam_rows_are_stochastic(n in 2usize..300, c_raw in 0u8..2) {
        let map = if c_raw == 0 { PiecewiseMap::doubling() } else { PiecewiseMap::tent(2.0).unwrap() };
        let p = build_ulam(&map, n, 10, 0).unwrap();
        for s in p.matrix().row_sums() {
            prop_assert!((s - 1.0).abs() < ROW_SUM_TOLERANCE);
        }
    }

    #[test]
    fn applying_preserves_mass(seed in 0u64..1000) {
        let p = build_ulam(&PiecewiseMap::logistic(), 64, 50, seed).unwrap();
        let f = random_smooth_densities(p.grid(), 1, seed).pop().unwrap();
        let g = apply(&p, &f).unwrap();
        prop_assert!((g.mass() - 1.0).abs() < 1e-12);
        prop_assert!(DensityVector::new(p.grid(), g.values().to_vec()).is_ok());
    }

    #[test]
    fn open_rows_are_substochastic(n in 2usize..400, c in 2.0f64..6.0) {
        let p = build_open_ulam(&PiecewiseMap::tent(c).unwrap(), n, 10, 0).unwrap();
        for s in p.row_sums() {
            prop_assert!((-1e-15..=1.0 + ROW_SUM_TOLERANCE).contains(&s));
        }
    }
}
