//! Execution of validated scenarios. Each kind calls one module entry
//! point and renders its results; nothing is written to disk here.

use std::fmt::Write as _;

use ergodic_core::function_semiflows::{invariance_test, mixing_correlation, SemiflowError};
use ergodic_core::interval_dynamics::{check_covering, Interval, MapError};
use ergodic_core::open_systems::{
    build_open_ulam, escape_triple_csv, intervals_csv, power_iteration_open, support_boxes,
    OpenSystemError,
};
use ergodic_core::pdmp::{
    evolve_density, simulate_path, stability_or_sweeping, stationary_estimate, PdmpError,
};
use ergodic_core::stochastics::{derive_seed, Histogram};
use ergodic_core::transfer_operators::{
    build_ulam, convergence_diagnostic, default_observable_bank, invariant_density,
    lower_function_test, random_smooth_densities, DensityVector, GridFunction, OperatorError,
};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{Scenario, ScenarioConfig};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Open(#[from] OpenSystemError),
    #[error(transparent)]
    Pdmp(#[from] PdmpError),
    #[error(transparent)]
    Semiflow(#[from] SemiflowError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// A rendered output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

struct Sink<'a> {
    cfg: &'a ScenarioConfig,
    out: Vec<Artifact>,
}

impl Sink<'_> {
    fn wants(&self, name: &str) -> bool {
        self.cfg.wants(name)
    }

    fn put(&mut self, name: &str, contents: String) {
        if self.wants(name) {
            self.out.push(Artifact {
                name: name.to_string(),
                contents,
            });
        }
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RuntimeError> {
        if self.wants(name) {
            let mut s = serde_json::to_string_pretty(value)?;
            s.push('\n');
            self.put(name, s);
        }
        Ok(())
    }
}

/// Runs the scenario and returns its artifacts in the order listed by
/// the config.
pub fn execute(cfg: &ScenarioConfig) -> Result<Vec<Artifact>, RuntimeError> {
    let mut sink = Sink {
        cfg,
        out: Vec::new(),
    };
    let seed = cfg.seed;
    match &cfg.scenario {
        Scenario::CoveringCheck { map, a, b, t0 } => {
            let report = check_covering(map, a, b, *t0)?;
            sink.put_json("covering.json", &report)?;
        }
        Scenario::UlamStability { map, numeric: n } => {
            let p = build_ulam(map, n.n_cells, n.samples_per_cell, seed)?;
            let inv = invariant_density(&p, n.tol, n.max_iters)?;
            let grid = p.grid();
            // Smooth laws plus three point-like laws; the latter expose
            // maps that do not spread mass (identity, rotations).
            let mut tests = random_smooth_densities(grid, n.test_densities, derive_seed(seed, 1));
            for j in [grid.n / 4, grid.n / 2, 3 * grid.n / 4] {
                tests.push(DensityVector::cell_mass(grid, j)?);
            }
            let bank = default_observable_bank(grid);
            let diag = convergence_diagnostic(&p, &inv.density, &tests, &bank, n.horizon)?;
            let h = GridFunction::constant(grid, n.lower_level);
            let lower = lower_function_test(&p, &h, &tests, n.horizon, n.lower_tol)?;
            sink.put("density.csv", inv.density.to_csv());
            sink.put_json(
                "stability.json",
                &json!({
                    "n_cells": grid.n,
                    "iterations": inv.iterations,
                    "residual": inv.residual,
                    "contraction_estimate": inv.contraction_estimate,
                    "f_star_residual": diag.f_star_residual,
                    "reference_pairings": diag.reference_pairings,
                    "lower_level": n.lower_level,
                    "lower_tolerance": lower.tolerance,
                    "tail_means": lower.tail_means,
                    "verdict": lower.verdict,
                }),
            )?;
            if sink.wants("diagnostics.csv") {
                let mut s = String::from("density,iterate,l1_distance");
                for k in 0..bank.len() {
                    let _ = write!(s, ",pairing{k}");
                }
                s.push('\n');
                for (d, trace) in diag.traces.iter().enumerate() {
                    for r in trace {
                        let _ = write!(s, "{d},{},{}", r.iterate, r.l1_distance);
                        for v in &r.pairings {
                            let _ = write!(s, ",{v}");
                        }
                        s.push('\n');
                    }
                }
                sink.put("diagnostics.csv", s);
            }
            if sink.wants("lower_function.csv") {
                let mut s = String::from("density,iterate,negative_part\n");
                for (d, seq) in lower.residuals.iter().enumerate() {
                    for (k, v) in seq.iter().enumerate() {
                        let _ = writeln!(s, "{d},{k},{v}");
                    }
                }
                sink.put("lower_function.csv", s);
            }
            if sink.wants("operator.csv") {
                sink.put("operator.csv", p.to_csv());
            }
        }
        Scenario::OpenEscape { map, numeric: n } => {
            let p = build_open_ulam(map, n.n_cells, n.samples_per_cell, seed)?;
            let t = power_iteration_open(&p, n.tol, n.max_iters)?;
            let support = support_boxes(&t.nu, p.grid(), n.support_threshold);
            let d = map.domain();
            let third = (d.hi - d.lo) / 3.0;
            let middle = Interval {
                lo: d.lo + third,
                hi: d.hi - third,
            };
            sink.put_json(
                "escape.json",
                &json!({
                    "lambda": t.lambda,
                    "escape_rate": t.escape_rate(),
                    "iterations": t.iterations,
                    "residuals": t.residuals,
                    "n_cells": p.n_cells(),
                    "support_threshold": n.support_threshold,
                    "support_cells": t.nu.iter().filter(|m| **m > n.support_threshold).count(),
                    "support_length": support.total_length(),
                    "nu_middle_third": t.nu_of(middle),
                }),
            )?;
            sink.put("escape.csv", escape_triple_csv(&t));
            sink.put("support.csv", intervals_csv(&support));
        }
        Scenario::PdmpRun {
            model,
            initial,
            numeric: n,
        } => {
            let path = simulate_path(model, initial, n.path_horizon, derive_seed(seed, 1))?;
            sink.put("trajectory.csv", path.to_csv());
            if sink.wants("densities.csv") {
                let init = vec![initial.clone(); n.n_particles];
                let mut s = format!(
                    "# n_particles={} lo={} hi={} bins={}\nt,cell,center,density,escaped\n",
                    n.n_particles, n.window.lo, n.window.hi, n.window.bins
                );
                for (k, &t) in n.times.iter().enumerate() {
                    let d = evolve_density(
                        model,
                        &init,
                        t,
                        n.window,
                        derive_seed(seed, 100 + k as u64),
                    )?;
                    histogram_rows(
                        &mut s,
                        &format!("{t}"),
                        &d.total,
                        &format!(",{}", d.escaped),
                    );
                }
                sink.put("densities.csv", s);
            }
            if let (true, Some(horizon)) = (sink.wants("stationary.csv"), n.stationary_horizon) {
                let e = stationary_estimate(
                    model,
                    initial,
                    n.burn_in.unwrap_or(0.0),
                    horizon,
                    n.window,
                    derive_seed(seed, 2),
                )?;
                let mut s = format!(
                    "# observed_time={} escaped={} lo={} hi={} bins={}\ncell,center,density\n",
                    e.observed_time, e.escaped, n.window.lo, n.window.hi, n.window.bins
                );
                histogram_rows(&mut s, "", &e.density.total, "");
                sink.put("stationary.csv", s);
            }
        }
        Scenario::PdmpFoguel { model, numeric: n } => {
            let r = stability_or_sweeping(
                model,
                (n.window[0], n.window[1]),
                &n.horizons,
                n.n_particles,
                seed,
            )?;
            sink.put_json("foguel.json", &r)?;
            if sink.wants("mass_curves.csv") {
                let mut s = String::from("t");
                for law in &r.laws {
                    let _ = write!(s, ",{law}");
                }
                s.push('\n');
                for (k, t) in r.horizons.iter().enumerate() {
                    let _ = write!(s, "{t}");
                    for curve in &r.mass_curves {
                        let _ = write!(s, ",{}", curve[k]);
                    }
                    s.push('\n');
                }
                sink.put("mass_curves.csv", s);
            }
        }
        Scenario::SemiflowInvariance(c) => {
            let r = invariance_test(c, seed)?;
            sink.put_json("invariance.json", &r)?;
        }
        Scenario::SemiflowMixing { lambda, numeric: n } => {
            let r = mixing_correlation(*lambda, &n.a, &n.b, &n.t_grid, n.n_samples, seed)?;
            sink.put_json("mixing.json", &r)?;
            if sink.wants("mixing.csv") {
                let mut s = String::from("t,joint,p_a,p_b,difference,gap,standard_error\n");
                for m in &r {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        m.t, m.joint, m.p_a, m.p_b, m.difference, m.gap, m.standard_error
                    );
                }
                sink.put("mixing.csv", s);
            }
        }
    }
    let mut out = sink.out;
    out.sort_by_key(|a| cfg.outputs.iter().position(|o| *o == a.name));
    Ok(out)
}

/// Appends `prefix,cell,center,density suffix` rows for each bin; an empty
/// prefix drops the leading column.
fn histogram_rows(s: &mut String, prefix: &str, h: &Histogram, suffix: &str) {
    for k in 0..h.bins() {
        if !prefix.is_empty() {
            let _ = write!(s, "{prefix},");
        }
        let _ = writeln!(s, "{k},{},{}{suffix}", h.cell_center(k), h.density[k]);
    }
}
