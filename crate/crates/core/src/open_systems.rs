//! Maps with holes: substochastic transfer operators, escape rates,
//! conditionally invariant densities and the eigenmeasure of the surviving
//! set.
//!
//! Mass whose image leaves the domain is dropped, so row sums below one
//! encode the probability of escaping from a cell in one step. Power
//! iteration on both sides of the matrix gives the escape factor `λ`, the
//! conditionally invariant density `f*` (`P f* = λ f*`) and the measure `ν`
//! with `ν(P f) = λ ν(f)`, whose support approximates the set of points that
//! never escape.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval_dynamics::{Interval, IntervalSet, PiecewiseMap};
use crate::transfer_operators::{
    grid_values_csv, ulam_rows, DensityVector, Grid, OperatorError, SparseMatrix, ROW_SUM_TOLERANCE,
};

/// Below this per-step survival factor everything is considered lost.
pub const TOTAL_ESCAPE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpenSystemError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("survival factor {lambda:.3e} is below {TOTAL_ESCAPE_THRESHOLD:e}: total escape")]
    TotalEscape { lambda: f64 },
    #[error("no mass survives {k} steps; the conditional law is undefined")]
    NullConditioning { k: usize },
    #[error("power iteration did not converge in {iterations} iterations (right {right:.3e}, left {left:.3e})")]
    NoConvergence {
        iterations: usize,
        right: f64,
        left: f64,
    },
}

/// Substochastic Ulam matrix of a map that may send mass outside its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenUlamOperator {
    grid: Grid,
    matrix: SparseMatrix,
}

/// Ulam matrix with escaping mass dropped. A map that loses nothing gives a
/// degenerate (closed) operator and a logged warning.
pub fn build_open_ulam(
    map: &PiecewiseMap,
    n_cells: usize,
    samples_per_cell: usize,
    seed: u64,
) -> Result<OpenUlamOperator, OpenSystemError> {
    if n_cells < 2 {
        return Err(OperatorError::TooFewCells {
            got: n_cells,
            need: 2,
        }
        .into());
    }
    let grid = Grid::over(map.domain(), n_cells)?;
    let rows = ulam_rows(map, grid, samples_per_cell, seed)?;
    let matrix = SparseMatrix::from_rows(rows.into_iter().map(|r| r.entries).collect());
    let op = OpenUlamOperator { grid, matrix };
    if op.is_closed() {
        log::warn!("open Ulam operator has no escape; the system is closed");
    }
    Ok(op)
}

impl OpenUlamOperator {
    /// Wraps an explicit nonnegative matrix with row sums at most one.
    pub fn from_matrix(grid: Grid, matrix: SparseMatrix) -> Result<Self, OpenSystemError> {
        if matrix.dim() != grid.n {
            return Err(OperatorError::DimensionMismatch {
                expected: grid.n,
                got: matrix.dim(),
            }
            .into());
        }
        for (i, s) in matrix.row_sums().iter().enumerate() {
            if *s > 1.0 + ROW_SUM_TOLERANCE || matrix.row(i).any(|e| e.1 < 0.0) {
                return Err(OperatorError::InvalidParameter(format!(
                    "row {i} is not substochastic (sum {s})"
                ))
                .into());
            }
        }
        Ok(Self { grid, matrix })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n
    }

    pub fn cell_width(&self) -> f64 {
        self.grid.cell_width()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_sums()
    }

    /// True when no row loses mass (beyond rounding).
    pub fn is_closed(&self) -> bool {
        self.row_sums()
            .iter()
            .all(|s| (s - 1.0).abs() <= ROW_SUM_TOLERANCE)
    }

    /// Unnormalized push-forward of cell values.
    fn push(&self, values: &[f64]) -> Vec<f64> {
        self.matrix.left_mul(values)
    }

    fn check(&self, f: &DensityVector) -> Result<(), OpenSystemError> {
        if f.values().len() != self.grid.n {
            return Err(OperatorError::DimensionMismatch {
                expected: self.grid.n,
                got: f.values().len(),
            }
            .into());
        }
        Ok(())
    }

    fn iterate(&self, f: &DensityVector, k: usize) -> Vec<f64> {
        let mut v = f.values().to_vec();
        for _ in 0..k {
            v = self.push(&v);
        }
        v
    }
}

/// Fraction of the initial law still inside the domain after `k` steps.
pub fn survival_fraction(
    p: &OpenUlamOperator,
    f: &DensityVector,
    k: usize,
) -> Result<f64, OpenSystemError> {
    p.check(f)?;
    if k == 0 {
        return Ok(1.0);
    }
    Ok(p.iterate(f, k).iter().sum::<f64>() * p.cell_width())
}

/// Law after `k` steps conditioned on not having escaped.
pub fn conditional_density(
    p: &OpenUlamOperator,
    f: &DensityVector,
    k: usize,
) -> Result<DensityVector, OpenSystemError> {
    p.check(f)?;
    if k == 0 {
        return Ok(f.clone());
    }
    let v = p.iterate(f, k);
    let mass = v.iter().sum::<f64>() * p.cell_width();
    if !(mass > 0.0) {
        return Err(OpenSystemError::NullConditioning { k });
    }
    Ok(DensityVector::normalized(p.grid, v)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenResiduals {
    /// `‖P f* − λ f*‖₁` with the cell-width weight.
    pub right: f64,
    /// `Σ_i |(ν ∘ P)_i − λ ν_i|`.
    pub left: f64,
    /// `|ν(f*) − 1|`.
    pub normalization: f64,
}

/// Escape factor, conditionally invariant density and eigenmeasure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeTriple {
    pub lambda: f64,
    pub f_star: Vec<f64>,
    pub nu: Vec<f64>,
    pub residuals: EigenResiduals,
    pub iterations: usize,
    pub grid: Grid,
}

impl EscapeTriple {
    /// Asymptotic escape rate `−ln λ`.
    pub fn escape_rate(&self) -> f64 {
        -self.lambda.ln()
    }

    /// `f*` rescaled to a probability density.
    pub fn conditional_invariant_density(&self) -> Result<DensityVector, OperatorError> {
        DensityVector::normalized(self.grid, self.f_star.clone())
    }

    /// `ν` of a closed interval, counting cells by overlap fraction.
    pub fn nu_of(&self, iv: Interval) -> f64 {
        let w = self.grid.cell_width();
        (0..self.grid.n)
            .filter_map(|j| {
                let ov = self.grid.cell(j).intersect(&iv)?;
                Some(self.nu[j] * ov.length() / w)
            })
            .sum()
    }
}

/// Simultaneous right and left power iteration with per-step
/// renormalization, run until both eigen-residuals fall below `tol`.
pub fn power_iteration_open(
    p: &OpenUlamOperator,
    tol: f64,
    max_iters: usize,
) -> Result<EscapeTriple, OpenSystemError> {
    let n = p.grid.n;
    let w = p.cell_width();
    if p.row_sums().iter().all(|s| *s <= 0.0) {
        return Err(OpenSystemError::TotalEscape { lambda: 0.0 });
    }
    let mut f = vec![1.0 / (n as f64 * w); n];
    let mut nu = vec![1.0 / n as f64; n];
    let (mut right, mut left) = (f64::INFINITY, f64::INFINITY);
    for it in 1..=max_iters {
        let g = p.push(&f);
        let lambda_r = g.iter().sum::<f64>() * w;
        if lambda_r < TOTAL_ESCAPE_THRESHOLD {
            return Err(OpenSystemError::TotalEscape { lambda: lambda_r });
        }
        let h = p.matrix.right_mul(&nu);
        let lambda_l: f64 = h.iter().sum();
        if lambda_l < TOTAL_ESCAPE_THRESHOLD {
            return Err(OpenSystemError::TotalEscape { lambda: lambda_l });
        }
        right = {
            let s: f64 = g
                .iter()
                .zip(&f)
                .map(|(a, b)| (a - lambda_r * b).abs())
                .sum();
            s * w
        };
        left = h
            .iter()
            .zip(&nu)
            .map(|(a, b)| (a - lambda_l * b).abs())
            .sum();
        f = g.into_iter().map(|v| v / lambda_r).collect();
        nu = h.into_iter().map(|v| v / lambda_l).collect();
        if right < tol && left < tol {
            return Ok(finish(p, f, nu, it));
        }
    }
    Err(OpenSystemError::NoConvergence {
        iterations: max_iters,
        right,
        left,
    })
}

fn finish(p: &OpenUlamOperator, mut f: Vec<f64>, nu: Vec<f64>, iterations: usize) -> EscapeTriple {
    let w = p.cell_width();
    let pairing: f64 = nu.iter().zip(&f).map(|(a, b)| a * b).sum();
    f.iter_mut().for_each(|v| *v /= pairing);
    let pf = p.push(&f);
    let mass_f = f.iter().sum::<f64>() * w;
    let lambda = pf.iter().sum::<f64>() * w / mass_f;
    let right = pf
        .iter()
        .zip(&f)
        .map(|(a, b)| (a - lambda * b).abs())
        .sum::<f64>()
        * w;
    let left = p
        .matrix
        .right_mul(&nu)
        .iter()
        .zip(&nu)
        .map(|(a, b)| (a - lambda * b).abs())
        .sum();
    let normalization = (nu.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - 1.0).abs();
    EscapeTriple {
        lambda,
        f_star: f,
        nu,
        residuals: EigenResiduals {
            right,
            left,
            normalization,
        },
        iterations,
        grid: p.grid,
    }
}

/// Union of the cells whose `ν`-mass exceeds `threshold`.
pub fn support_boxes(nu: &[f64], grid: Grid, threshold: f64) -> IntervalSet {
    IntervalSet::from_intervals(
        nu.iter()
            .enumerate()
            .filter(|(_, m)| **m > threshold)
            .map(|(j, _)| grid.cell(j))
            .collect(),
    )
}

/// `lo,hi` rows, one per maximal interval.
pub fn intervals_csv(set: &IntervalSet) -> String {
    let mut s = String::from("lo,hi\n");
    for iv in set.intervals() {
        let _ = writeln!(s, "{},{}", iv.lo, iv.hi);
    }
    s
}

/// CSV of `f*` and `ν` side by side on the grid.
pub fn escape_triple_csv(t: &EscapeTriple) -> String {
    let mut s = grid_values_csv(t.grid, &t.f_star, "f_star");
    s.insert_str(0, &format!("# lambda={}\n", t.lambda));
    let mut out = String::new();
    for (k, line) in s.lines().enumerate() {
        out.push_str(line);
        match k {
            0 | 1 => {}
            2 => out.push_str(",nu"),
            _ => {
                let _ = write!(out, ",{}", t.nu[k - 3]);
            }
        }
        out.push('\n');
    }
    out
}
