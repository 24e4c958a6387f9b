//! Ulam discretization of Frobenius–Perron operators.
//!
//! The domain is cut into `n` equal cells and entry `(i, j)` of the
//! transition matrix is the fraction of cell `i` (in Lebesgue measure) that
//! the map sends into cell `j`. Pushing a piecewise-constant density forward
//! is then `g_j = Σ_i f_i M_ij`, and the Koopman side acts by composition.
//!
//! For affine branches (including scaled tents) the fractions are computed
//! geometrically and are exact up to rounding; other branches use stratified
//! sampling with one independent stream per cell.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval_dynamics::{Interval, PiecewiseMap};
use crate::stochastics::SeededStream;

/// Row sums of closed operators must equal one to this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Densities must integrate to one to this tolerance.
pub const DENSITY_MASS_TOLERANCE: f64 = 1e-10;
/// Default number of stratified samples per cell for non-affine branches.
pub const DEFAULT_SAMPLES_PER_CELL: usize = 1000;
/// Tail residual threshold for a "stable" lower-function verdict.
pub const STABLE_TOLERANCE: f64 = 1e-4;
/// Number of trailing iterates averaged for the lower-function verdict.
pub const TAIL_WINDOW: usize = 10;

/// Overlaps shorter than this fraction of the image length are rounding
/// slivers from cell boundaries that the map sends onto cell boundaries.
const SLIVER: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("map is not closed: {escaped:.3e} of cell {cell} leaves the domain; use open_systems")]
    NotClosed { cell: usize, escaped: f64 },
    #[error("need at least {need} cells, got {got}")]
    TooFewCells { got: usize, need: usize },
    #[error("dimension mismatch: operator has {expected} cells, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error(
        "power iteration did not converge in {iterations} iterations (residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("lower function must be nonnegative and not identically zero")]
    TrivialLowerFunction,
    #[error("map evaluation failed at x = {x}")]
    Evaluation { x: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A uniform partition of `[lo, hi]` into `n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self, OperatorError> {
        if n == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(OperatorError::InvalidParameter(format!(
                "grid [{lo}, {hi}] with {n} cells"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn over(domain: Interval, n: usize) -> Result<Self, OperatorError> {
        Self::new(domain.lo, domain.hi, n)
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    /// Left boundary of cell `j`; `boundary(n) == hi` exactly.
    pub fn boundary(&self, j: usize) -> f64 {
        if j >= self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * (j as f64 / self.n as f64)
        }
    }

    pub fn cell(&self, j: usize) -> Interval {
        Interval {
            lo: self.boundary(j),
            hi: self.boundary(j + 1),
        }
    }

    pub fn center(&self, j: usize) -> f64 {
        0.5 * (self.boundary(j) + self.boundary(j + 1))
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.center(j)).collect()
    }

    /// Cell containing `x`; the right end belongs to the last cell.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let mut j = (((x - self.lo) / (self.hi - self.lo)) * self.n as f64).floor() as usize;
        j = j.min(self.n - 1);
        // Correct off-by-one from rounding against the exact boundaries.
        if x < self.boundary(j) {
            j -= 1;
        } else if j + 1 < self.n && x >= self.boundary(j + 1) {
            j += 1;
        }
        Some(j)
    }
}

/// Nonnegative sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (j, v) in row {
                if cols.len() > start && cols.last() == Some(&j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|e| e.1).sum())
            .collect()
    }

    /// `y_j = Σ_i x_i M_ij` (row vector times matrix).
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, m) in self.row(i) {
                    y[j] += xi * m;
                }
            }
        }
        y
    }

    /// `y_i = Σ_j M_ij x_j` (matrix times column vector).
    pub fn right_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, m)| m * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut r = vec![0.0; self.n];
                for (j, v) in self.row(i) {
                    r[j] = v;
                }
                r
            })
            .collect()
    }
}

/// One row of an Ulam matrix together with the mass that left the domain.
pub(crate) struct UlamRow {
    pub entries: Vec<(usize, f64)>,
    pub escaped: f64,
}

/// Builds every Ulam row of `map` on `grid`; independent per cell.
pub(crate) fn ulam_rows(
    map: &PiecewiseMap,
    grid: Grid,
    samples_per_cell: usize,
    seed: u64,
) -> Result<Vec<UlamRow>, OperatorError> {
    if samples_per_cell == 0 {
        return Err(OperatorError::InvalidParameter(
            "samples_per_cell must be positive".into(),
        ));
    }
    (0..grid.n)
        .into_par_iter()
        .map(|i| ulam_row(map, grid, i, samples_per_cell, seed))
        .collect()
}

fn ulam_row(
    map: &PiecewiseMap,
    grid: Grid,
    i: usize,
    samples: usize,
    seed: u64,
) -> Result<UlamRow, OperatorError> {
    let cell = grid.cell(i);
    let w = cell.length();
    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut escaped = 0.0;
    let mut rng = SeededStream::new(seed, i as u64).rng();
    for b in map.branches() {
        let Some(part) = cell.intersect(&b.interval()) else {
            continue;
        };
        if part.length() <= 0.0 {
            continue;
        }
        let weight = part.length() / w;
        match b.kind.affine_on(&b.interval()) {
            Some((s, c)) => {
                let (u, v) = {
                    let (a, z) = (s * part.lo + c, s * part.hi + c);
                    (a.min(z), a.max(z))
                };
                let len = v - u;
                let inside = Interval {
                    lo: u.max(grid.lo),
                    hi: v.min(grid.hi),
                };
                let mut kept = Vec::new();
                if inside.lo < inside.hi {
                    let j0 = grid.cell_of(inside.lo).unwrap_or(0);
                    let j1 = grid.cell_of(inside.hi).unwrap_or(grid.n - 1);
                    for j in j0..=j1 {
                        if let Some(ov) = grid.cell(j).intersect(&inside) {
                            if ov.length() > SLIVER * len {
                                kept.push((j, ov.length()));
                            }
                        }
                    }
                }
                let mut outside = len - inside.length().max(0.0);
                if outside <= SLIVER * len {
                    outside = 0.0;
                }
                let inside_mass = weight * (1.0 - outside / len);
                escaped += weight - inside_mass;
                let total: f64 = kept.iter().map(|e| e.1).sum();
                if total > 0.0 {
                    entries.extend(kept.into_iter().map(|(j, l)| (j, inside_mass * l / total)));
                }
            }
            None => {
                let h = part.length() / samples as f64;
                let per = weight / samples as f64;
                for k in 0..samples {
                    let x = part.lo + (k as f64 + rng.random::<f64>()) * h;
                    let x = x.min(part.hi);
                    let y = b.kind.eval(x);
                    match grid.cell_of(y) {
                        Some(j) => entries.push((j, per)),
                        None => escaped += per,
                    }
                }
            }
        }
    }
    Ok(UlamRow { entries, escaped })
}

/// Row-stochastic Ulam discretization of a closed map's transfer operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamOperator {
    grid: Grid,
    matrix: SparseMatrix,
}

/// Ulam matrix of a closed map on `n_cells` equal cells of its domain.
pub fn build_ulam(
    map: &PiecewiseMap,
    n_cells: usize,
    samples_per_cell: usize,
    seed: u64,
) -> Result<UlamOperator, OperatorError> {
    if n_cells < 2 {
        return Err(OperatorError::TooFewCells {
            got: n_cells,
            need: 2,
        });
    }
    let grid = Grid::over(map.domain(), n_cells)?;
    let rows = ulam_rows(map, grid, samples_per_cell, seed)?;
    let mut out = Vec::with_capacity(rows.len());
    for (cell, row) in rows.into_iter().enumerate() {
        if row.escaped > 0.0 {
            return Err(OperatorError::NotClosed {
                cell,
                escaped: row.escaped,
            });
        }
        let sum: f64 = row.entries.iter().map(|e| e.1).sum();
        out.push(row.entries.into_iter().map(|(j, v)| (j, v / sum)).collect());
    }
    Ok(UlamOperator {
        grid,
        matrix: SparseMatrix::from_rows(out),
    })
}

impl UlamOperator {
    /// Wraps an explicit matrix, checking nonnegativity and row sums.
    pub fn from_matrix(grid: Grid, matrix: SparseMatrix) -> Result<Self, OperatorError> {
        if matrix.dim() != grid.n {
            return Err(OperatorError::DimensionMismatch {
                expected: grid.n,
                got: matrix.dim(),
            });
        }
        for (i, s) in matrix.row_sums().iter().enumerate() {
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE || matrix.row(i).any(|e| e.1 < 0.0) {
                return Err(OperatorError::InvalidParameter(format!(
                    "row {i} is not a probability vector (sum {s})"
                )));
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

    /// Row-major dense CSV with a metadata line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# n_cells={} cell_width={} lo={} hi={}",
            self.grid.n,
            self.grid.cell_width(),
            self.grid.lo,
            self.grid.hi
        );
        for row in self.matrix.to_dense() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

/// A probability density, piecewise constant on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityVector {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityVector {
    /// Validates nonnegativity and unit mass.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, OperatorError> {
        if values.len() != grid.n {
            return Err(OperatorError::DimensionMismatch {
                expected: grid.n,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(OperatorError::InvalidDensity(
                "negative or non-finite value".into(),
            ));
        }
        let mass = values.iter().sum::<f64>() * grid.cell_width();
        if (mass - 1.0).abs() > DENSITY_MASS_TOLERANCE {
            return Err(OperatorError::InvalidDensity(format!("mass {mass} != 1")));
        }
        Ok(Self { grid, values })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: Grid, mut values: Vec<f64>) -> Result<Self, OperatorError> {
        let mass = values.iter().sum::<f64>() * grid.cell_width();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(OperatorError::InvalidDensity(format!("mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::new(grid, values)
    }

    pub fn uniform(grid: Grid) -> Self {
        let v = 1.0 / (grid.hi - grid.lo);
        Self {
            grid,
            values: vec![v; grid.n],
        }
    }

    /// All mass in cell `i`.
    pub fn cell_mass(grid: Grid, i: usize) -> Result<Self, OperatorError> {
        if i >= grid.n {
            return Err(OperatorError::DimensionMismatch {
                expected: grid.n,
                got: i,
            });
        }
        let mut values = vec![0.0; grid.n];
        values[i] = 1.0 / grid.cell_width();
        Ok(Self { grid, values })
    }

    /// Cell-midpoint samples of `f`, renormalized.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Result<Self, OperatorError> {
        Self::normalized(grid, grid.centers().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_width()
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        l1(&self.values, other, self.grid.cell_width())
    }

    pub fn to_csv(&self) -> String {
        grid_values_csv(self.grid, &self.values, "density")
    }
}

pub(crate) fn grid_values_csv(grid: Grid, values: &[f64], name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# n_cells={} cell_width={} lo={} hi={}",
        grid.n,
        grid.cell_width(),
        grid.lo,
        grid.hi
    );
    let _ = writeln!(s, "cell,center,{name}");
    for (j, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{j},{},{v}", grid.center(j));
    }
    s
}

pub(crate) fn l1(a: &[f64], b: &[f64], w: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * w
}

/// A function on the grid, read off-grid by linear interpolation between
/// cell centers (constant beyond the outermost centers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, OperatorError> {
        if values.len() != grid.n {
            return Err(OperatorError::DimensionMismatch {
                expected: grid.n,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Self {
        Self {
            grid,
            values: grid.centers().into_iter().map(f).collect(),
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let w = self.grid.cell_width();
        let s = (x - self.grid.lo) / w - 0.5;
        if s <= 0.0 {
            return self.values[0];
        }
        let k = s.floor() as usize;
        if k + 1 >= self.grid.n {
            return self.values[self.grid.n - 1];
        }
        let t = s - k as f64;
        self.values[k] * (1.0 - t) + self.values[k + 1] * t
    }
}

/// `⟨f, g⟩ = Σ f_i g_i · cell_width`.
pub fn pairing(f: &DensityVector, g: &GridFunction) -> f64 {
    f.values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * f.grid.cell_width()
}

fn check_dim(expected: usize, got: usize) -> Result<(), OperatorError> {
    if expected != got {
        return Err(OperatorError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Pushes a density forward one step.
pub fn apply(p: &UlamOperator, f: &DensityVector) -> Result<DensityVector, OperatorError> {
    check_dim(p.grid.n, f.values.len())?;
    let mut values = p.matrix.left_mul(&f.values);
    let mass = values.iter().sum::<f64>() * p.grid.cell_width();
    if mass > 0.0 {
        values.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(DensityVector {
        grid: p.grid,
        values,
    })
}

/// `g ∘ S` at the cell centers of `g`'s grid.
pub fn koopman_apply(map: &PiecewiseMap, g: &GridFunction) -> Result<GridFunction, OperatorError> {
    let values = g
        .grid
        .centers()
        .into_iter()
        .map(|x| {
            let y = map
                .evaluate(x)
                .map_err(|_| OperatorError::Evaluation { x })?;
            if !map.domain().contains(y) {
                return Err(OperatorError::NotClosed {
                    cell: g.grid.cell_of(x).unwrap_or(0),
                    escaped: 1.0,
                });
            }
            Ok(g.eval(y))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GridFunction {
        grid: g.grid,
        values,
    })
}

/// Fixed density reached by power iteration from the uniform density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantDensity {
    pub density: DensityVector,
    pub iterations: usize,
    /// Final `‖P f − f‖₁`.
    pub residual: f64,
    /// Ratio of the last two residuals; near one signals a small spectral
    /// gap or several invariant densities.
    pub contraction_estimate: Option<f64>,
}

/// Power iteration from uniform until `‖P f − f‖₁ < tol`.
///
/// When the operator has several invariant densities the one reached from
/// the uniform density is returned.
pub fn invariant_density(
    p: &UlamOperator,
    tol: f64,
    max_iters: usize,
) -> Result<InvariantDensity, OperatorError> {
    let w = p.grid.cell_width();
    let mut f = DensityVector::uniform(p.grid);
    let mut previous: Option<f64> = None;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let g = apply(p, &f)?;
        let r = l1(&g.values, &f.values, w);
        let contraction = previous.filter(|&q| q > 0.0).map(|q| r / q);
        previous = Some(r);
        residual = r;
        f = g;
        if r < tol {
            return Ok(InvariantDensity {
                density: f,
                iterations: it,
                residual: r,
                contraction_estimate: contraction,
            });
        }
    }
    Err(OperatorError::NoConvergence {
        iterations: max_iters,
        residual,
    })
}

/// One iterate of a convergence diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub iterate: usize,
    pub l1_distance: f64,
    pub pairings: Vec<f64>,
}

/// Per-density convergence traces plus the reference pairings `⟨f*, g⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostic {
    pub traces: Vec<Vec<DiagnosticRecord>>,
    pub reference_pairings: Vec<f64>,
    /// `‖P f* − f*‖₁`, reported so callers can check the precondition.
    pub f_star_residual: f64,
}

/// `cos(2π m u)` and `sin(2π m u)` for `m = 1..=3`, with `u` the position
/// rescaled to `[0, 1]`.
pub fn default_observable_bank(grid: Grid) -> Vec<GridFunction> {
    let tau = std::f64::consts::TAU;
    let span = grid.hi - grid.lo;
    let mut out = Vec::new();
    for m in 1..=3 {
        let m = m as f64;
        out.push(GridFunction::from_fn(grid, |x| {
            (tau * m * (x - grid.lo) / span).cos()
        }));
        out.push(GridFunction::from_fn(grid, |x| {
            (tau * m * (x - grid.lo) / span).sin()
        }));
    }
    out
}

/// Tracks `‖P^k f − f*‖₁` (exactness surrogate) and `⟨P^k f, g⟩` for each
/// observable (mixing surrogate) for `k = 0..=horizon`.
pub fn convergence_diagnostic(
    p: &UlamOperator,
    f_star: &DensityVector,
    test_densities: &[DensityVector],
    observables: &[GridFunction],
    horizon: usize,
) -> Result<ConvergenceDiagnostic, OperatorError> {
    check_dim(p.grid.n, f_star.values.len())?;
    for g in observables {
        check_dim(p.grid.n, g.values.len())?;
    }
    let w = p.grid.cell_width();
    let f_star_residual = l1(&apply(p, f_star)?.values, &f_star.values, w);
    let traces = test_densities
        .iter()
        .map(|f0| {
            check_dim(p.grid.n, f0.values.len())?;
            let mut f = f0.clone();
            let mut trace = Vec::with_capacity(horizon + 1);
            for k in 0..=horizon {
                if k > 0 {
                    f = apply(p, &f)?;
                }
                trace.push(DiagnosticRecord {
                    iterate: k,
                    l1_distance: f.l1_distance(&f_star.values),
                    pairings: observables.iter().map(|g| pairing(&f, g)).collect(),
                });
            }
            Ok(trace)
        })
        .collect::<Result<Vec<_>, OperatorError>>()?;
    Ok(ConvergenceDiagnostic {
        traces,
        reference_pairings: observables.iter().map(|g| pairing(f_star, g)).collect(),
        f_star_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    Stable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerFunctionReport {
    pub h: Vec<f64>,
    /// `residuals[d][k] = ‖(P^k f_d − h)⁻‖₁`.
    pub residuals: Vec<Vec<f64>>,
    /// Mean of the last [`TAIL_WINDOW`] residuals per density.
    pub tail_means: Vec<f64>,
    pub tolerance: f64,
    pub verdict: StabilityVerdict,
}

/// Checks numerically whether `h` is a lower function: the negative part of
/// `P^k f − h` must vanish for every test density.
pub fn lower_function_test(
    p: &UlamOperator,
    h: &GridFunction,
    test_densities: &[DensityVector],
    horizon: usize,
    tol: f64,
) -> Result<LowerFunctionReport, OperatorError> {
    check_dim(p.grid.n, h.values.len())?;
    if h.values.iter().any(|v| !(*v >= 0.0)) || h.values.iter().all(|v| *v == 0.0) {
        return Err(OperatorError::TrivialLowerFunction);
    }
    if test_densities.is_empty() {
        return Err(OperatorError::InvalidParameter("no test densities".into()));
    }
    let w = p.grid.cell_width();
    let mut residuals = Vec::with_capacity(test_densities.len());
    for f0 in test_densities {
        check_dim(p.grid.n, f0.values.len())?;
        let mut f = f0.clone();
        let mut seq = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            if k > 0 {
                f = apply(p, &f)?;
            }
            let neg: f64 = f
                .values
                .iter()
                .zip(&h.values)
                .map(|(fv, hv)| (hv - fv).max(0.0))
                .sum();
            seq.push(neg * w);
        }
        residuals.push(seq);
    }
    let tail_means: Vec<f64> = residuals
        .iter()
        .map(|seq| {
            let tail = &seq[seq.len().saturating_sub(TAIL_WINDOW)..];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect();
    let verdict = if tail_means.iter().all(|m| *m < tol) {
        StabilityVerdict::Stable
    } else {
        StabilityVerdict::Inconclusive
    };
    Ok(LowerFunctionReport {
        h: h.values.clone(),
        residuals,
        tail_means,
        tolerance: tol,
        verdict,
    })
}

/// Random smooth positive densities `1 + Σ a_m cos(2π m u + φ_m)` scaled to
/// stay positive; used as test laws by the diagnostics.
pub fn random_smooth_densities(grid: Grid, count: usize, seed: u64) -> Vec<DensityVector> {
    (0..count)
        .map(|k| {
            let mut rng = SeededStream::new(seed, k as u64).rng();
            let coeffs: Vec<(f64, f64)> = (1..=4)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let total: f64 = coeffs.iter().map(|c| c.0.abs()).sum();
            let span = grid.hi - grid.lo;
            DensityVector::from_fn(grid, |x| {
                let u = (x - grid.lo) / span;
                let s: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, (a, ph))| a * (std::f64::consts::TAU * (m + 1) as f64 * u + ph).cos())
                    .sum();
                1.0 + 0.95 * s / total.max(1.0)
            })
            .expect("positive by construction")
        })
        .collect()
}
