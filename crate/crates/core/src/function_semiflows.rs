//! Semiflows on spaces of functions generated by first-order transport
//! equations `c(x) ∂u/∂x = f(x, u)`, the shift representation
//! `(Qv)(s) = (S^s v)(1)`, and the Gaussian fields used to probe invariance
//! and mixing.
//!
//! Function states are samples on a strictly increasing grid, read off-grid
//! by monotone (Fritsch–Carlson) cubic interpolation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastics::{ks_two_sample, standard_normal, SeededStream, StatsError};

/// Tolerance on the phase-space constraint `v(0) = 0`.
pub const PHASE_SPACE_TOLERANCE: f64 = 1e-12;
/// Significance level of the invariance test before Bonferroni correction.
pub const INVARIANCE_ALPHA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemiflowError {
    #[error("grid must be strictly increasing with matching values")]
    BadGrid,
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("state violates the boundary condition: v({x0}) = {value}, expected {expected}")]
    PhaseSpace { x0: f64, value: f64, expected: f64 },
    #[error("x = {x} is outside the sampled range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("characteristic through x = {x} leaves [0, 1]")]
    CharacteristicEscape { x: f64 },
    #[error("ODE integration produced a non-finite value at x = {x}")]
    Tolerance { x: f64 },
    #[error("invalid semiflow: {0}")]
    InvalidSemiflow(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Values of a real function on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    grid: Vec<f64>,
    values: Vec<f64>,
    #[serde(skip)]
    slopes: Vec<f64>,
}

impl FunctionSample {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self, SemiflowError> {
        if grid.is_empty()
            || grid.len() != values.len()
            || grid.windows(2).any(|w| !(w[1] > w[0]))
            || grid.iter().chain(&values).any(|v| !v.is_finite())
        {
            return Err(SemiflowError::BadGrid);
        }
        let slopes = pchip_slopes(&grid, &values);
        Ok(Self {
            grid,
            values,
            slopes,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Vec<f64>, f: F) -> Result<Self, SemiflowError> {
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Monotone cubic interpolation; exact at the nodes.
    pub fn eval(&self, x: f64) -> Result<f64, SemiflowError> {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if !(x >= lo && x <= hi) {
            return Err(SemiflowError::OutOfRange { x, lo, hi });
        }
        let n = self.grid.len();
        if n == 1 {
            return Ok(self.values[0]);
        }
        let k = self.grid.partition_point(|g| *g <= x);
        if k > 0 && self.grid[k - 1] == x {
            return Ok(self.values[k - 1]);
        }
        let i = (k.max(1) - 1).min(n - 2);
        let h = self.grid[i + 1] - self.grid[i];
        let t = (x - self.grid[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1])
    }

    /// Largest absolute difference at shared nodes.
    pub fn sup_distance(&self, other: &FunctionSample) -> Result<f64, SemiflowError> {
        if self.grid != other.grid {
            return Err(SemiflowError::BadGrid);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `x,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,value\n");
        for (x, v) in self.grid.iter().zip(&self.values) {
            let _ = writeln!(s, "{x},{v}");
        }
        s
    }

    fn with_values(&self, values: Vec<f64>) -> Result<Self, SemiflowError> {
        Self::new(self.grid.clone(), values)
    }
}

/// Fritsch–Carlson derivative estimates with Brodlie's weighted harmonic
/// mean in the interior and shape-preserving three-point ends.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![0.0];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        if a * b > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// `{0} ∪ geomspace(min_positive, 1, n - 1)`: refined near the degenerate
/// point where characteristics accumulate.
pub fn geometric_grid(n: usize, min_positive: f64) -> Result<Vec<f64>, SemiflowError> {
    if n < 3 || !(min_positive > 0.0 && min_positive < 1.0) {
        return Err(SemiflowError::InvalidParameter(format!(
            "geometric grid with {n} nodes from {min_positive}"
        )));
    }
    let m = n - 1;
    let ratio = (1.0 / min_positive).ln() / (m - 1) as f64;
    let mut g = vec![0.0];
    g.extend((0..m).map(|k| {
        if k == m - 1 {
            1.0
        } else {
            min_positive * (ratio * k as f64).exp()
        }
    }));
    Ok(g)
}

/// Common interface of the semiflows, enough to build the shift
/// representation.
pub trait Semiflow {
    /// `S^t v` on `v`'s grid.
    fn apply(&self, v: &FunctionSample, t: f64) -> Result<FunctionSample, SemiflowError>;
    /// `(S^t v)(x)` at a single point.
    fn value_at(&self, v: &FunctionSample, t: f64, x: f64) -> Result<f64, SemiflowError>;
}

/// `x ∂u/∂x = λu` type growth: `(S^t v)(x) = e^{λt} v(e^{-t} x)` on
/// `{v ∈ C[0,1] : v(0) = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMaturitySemiflow {
    lambda: f64,
    /// Multiplies the growth prefactor's exponent; 1 is the true semiflow.
    /// Only used to build deliberately wrong variants for power checks.
    #[serde(skip, default = "one")]
    prefactor_power: f64,
}

fn one() -> f64 {
    1.0
}

impl LinearMaturitySemiflow {
    pub fn new(lambda: f64) -> Result<Self, SemiflowError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(SemiflowError::InvalidSemiflow(format!("lambda = {lambda}")));
        }
        Ok(Self {
            lambda,
            prefactor_power: 1.0,
        })
    }

    /// Variant with prefactor `e^{2λt}`, which does not preserve the
    /// invariant field.
    pub fn corrupted(lambda: f64) -> Result<Self, SemiflowError> {
        Ok(Self {
            prefactor_power: 2.0,
            ..Self::new(lambda)?
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check(&self, v: &FunctionSample, t: f64) -> Result<(), SemiflowError> {
        if !(t >= 0.0) {
            return Err(SemiflowError::NegativeTime(t));
        }
        if v.grid[0] == 0.0 && v.values[0].abs() > PHASE_SPACE_TOLERANCE {
            return Err(SemiflowError::PhaseSpace {
                x0: 0.0,
                value: v.values[0],
                expected: 0.0,
            });
        }
        Ok(())
    }

    fn growth(&self, t: f64) -> f64 {
        (self.prefactor_power * self.lambda * t).exp()
    }
}

impl Semiflow for LinearMaturitySemiflow {
    fn apply(&self, v: &FunctionSample, t: f64) -> Result<FunctionSample, SemiflowError> {
        self.check(v, t)?;
        if t == 0.0 {
            return Ok(v.clone());
        }
        let (g, s) = (self.growth(t), (-t).exp());
        let mut values = v
            .grid
            .iter()
            .map(|&x| v.eval(s * x).map(|y| g * y))
            .collect::<Result<Vec<_>, _>>()?;
        if v.grid[0] == 0.0 {
            values[0] = 0.0;
        }
        v.with_values(values)
    }

    fn value_at(&self, v: &FunctionSample, t: f64, x: f64) -> Result<f64, SemiflowError> {
        self.check(v, t)?;
        Ok(self.growth(t) * v.eval((-t).exp() * x)?)
    }
}

/// Polynomial velocity `c(x) = Σ coeffs[k] x^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub coeffs: Vec<f64>,
}

impl VelocityField {
    pub fn linear(rate: f64) -> Self {
        Self {
            coeffs: vec![0.0, rate],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Reaction term `f(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reaction {
    /// `λ u + Σ source[k] x^k`
    Affine {
        lambda: f64,
        #[serde(default)]
        source: Vec<f64>,
    },
    /// `rate · u · (1 − u / capacity)`
    Logistic { rate: f64, capacity: f64 },
}

impl Reaction {
    pub fn linear(lambda: f64) -> Self {
        Reaction::Affine {
            lambda,
            source: Vec::new(),
        }
    }

    pub fn eval(&self, x: f64, u: f64) -> f64 {
        match self {
            Reaction::Affine { lambda, source } => {
                lambda * u + source.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            Reaction::Logistic { rate, capacity } => rate * u * (1.0 - u / capacity),
        }
    }
}

/// `c(x) ∂u/∂x = f(x, u)` with `u(t, 0) = u_star`, solved along
/// characteristics with fixed-step RK4 whose global error is proportional to
/// `ode_tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralSemiflow {
    pub c: VelocityField,
    pub f: Reaction,
    pub u_star: f64,
    pub ode_tol: f64,
}

impl GeneralSemiflow {
    pub fn new(
        c: VelocityField,
        f: Reaction,
        u_star: f64,
        ode_tol: f64,
    ) -> Result<Self, SemiflowError> {
        if c.eval(0.0).abs() > 1e-12 {
            return Err(SemiflowError::InvalidSemiflow("c(0) must vanish".into()));
        }
        if (1..=1000).any(|k| !(c.eval(k as f64 / 1000.0) > 0.0)) {
            return Err(SemiflowError::InvalidSemiflow(
                "c must be positive on (0, 1]".into(),
            ));
        }
        if f.eval(0.0, u_star).abs() > 1e-10 {
            return Err(SemiflowError::InvalidSemiflow(
                "f(0, u_star) must vanish".into(),
            ));
        }
        if !(ode_tol > 0.0 && ode_tol < 1.0) {
            return Err(SemiflowError::InvalidParameter(format!(
                "ode_tol {ode_tol}"
            )));
        }
        Ok(Self {
            c,
            f,
            u_star,
            ode_tol,
        })
    }

    fn steps(&self, t: f64) -> (usize, f64) {
        let n = (t / self.ode_tol.powf(0.25)).ceil().max(1.0) as usize;
        (n, t / n as f64)
    }

    fn check(&self, v: &FunctionSample, t: f64) -> Result<(), SemiflowError> {
        if !(t >= 0.0) {
            return Err(SemiflowError::NegativeTime(t));
        }
        if v.grid[0] == 0.0 && v.values[0] != self.u_star {
            return Err(SemiflowError::PhaseSpace {
                x0: 0.0,
                value: v.values[0],
                expected: self.u_star,
            });
        }
        Ok(())
    }

    fn solve_at(&self, v: &FunctionSample, t: f64, x: f64) -> Result<f64, SemiflowError> {
        if x == 0.0 {
            return Ok(self.u_star);
        }
        let (n, h) = self.steps(t);
        let c = |y: f64| self.c.eval(y);
        let mut y = x;
        for _ in 0..n {
            let k1 = -c(y);
            let k2 = -c(y + 0.5 * h * k1);
            let k3 = -c(y + 0.5 * h * k2);
            let k4 = -c(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if !y.is_finite() {
            return Err(SemiflowError::Tolerance { x });
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(SemiflowError::CharacteristicEscape { x });
        }
        let mut u = v.eval(y)?;
        let rhs = |y: f64, u: f64| (c(y), self.f.eval(y, u));
        for _ in 0..n {
            let (a1, b1) = rhs(y, u);
            let (a2, b2) = rhs(y + 0.5 * h * a1, u + 0.5 * h * b1);
            let (a3, b3) = rhs(y + 0.5 * h * a2, u + 0.5 * h * b2);
            let (a4, b4) = rhs(y + h * a3, u + h * b3);
            y += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            u += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        if !u.is_finite() {
            return Err(SemiflowError::Tolerance { x });
        }
        Ok(u)
    }
}

impl Semiflow for GeneralSemiflow {
    fn apply(&self, v: &FunctionSample, t: f64) -> Result<FunctionSample, SemiflowError> {
        characteristics_solve(self, v, t)
    }

    fn value_at(&self, v: &FunctionSample, t: f64, x: f64) -> Result<f64, SemiflowError> {
        self.check(v, t)?;
        if t == 0.0 {
            return v.eval(x);
        }
        self.solve_at(v, t, x)
    }
}

/// `S^t v` for the general equation; node `x = 0` keeps `u_star`.
pub fn characteristics_solve(
    sf: &GeneralSemiflow,
    v: &FunctionSample,
    t: f64,
) -> Result<FunctionSample, SemiflowError> {
    sf.check(v, t)?;
    if t == 0.0 {
        return Ok(v.clone());
    }
    let values = v
        .grid
        .par_iter()
        .map(|&x| sf.solve_at(v, t, x))
        .collect::<Result<Vec<_>, _>>()?;
    v.with_values(values)
}

/// `(Qv)(s) = (S^s v)(1)` on `s_grid`.
pub fn shift_representation<S: Semiflow + ?Sized>(
    sf: &S,
    v: &FunctionSample,
    s_grid: &[f64],
) -> Result<Vec<f64>, SemiflowError> {
    s_grid.iter().map(|&s| sf.value_at(v, s, 1.0)).collect()
}

/// `sup_s |Q(S^t v)(s) − (Qv)(s + t)|` over `s_grid`.
pub fn isomorphism_residual<S: Semiflow + ?Sized>(
    sf: &S,
    v: &FunctionSample,
    t: f64,
    s_grid: &[f64],
) -> Result<f64, SemiflowError> {
    if !(t >= 0.0) || s_grid.iter().any(|s| !(*s >= 0.0)) {
        return Err(SemiflowError::NegativeTime(t));
    }
    let moved = sf.apply(v, t)?;
    let lhs = shift_representation(sf, &moved, s_grid)?;
    let shifted: Vec<f64> = s_grid.iter().map(|s| s + t).collect();
    let rhs = shift_representation(sf, v, &shifted)?;
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

fn check_unit_grid(x_grid: &[f64]) -> Result<(), SemiflowError> {
    if x_grid.first() != Some(&0.0)
        || x_grid.windows(2).any(|w| !(w[1] > w[0]))
        || x_grid.last().is_some_and(|x| *x > 1.0)
    {
        return Err(SemiflowError::InvalidParameter(
            "grid must start at 0, increase strictly and stay in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Paths of `ξ_x = w(x^{2λ})` with `w` a standard Wiener process, sampled
/// exactly through independent Gaussian increments; sample `i` uses
/// substream `i`.
pub fn sample_invariant_field(
    lambda: f64,
    x_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FunctionSample>, SemiflowError> {
    if !(lambda > 0.0) {
        return Err(SemiflowError::InvalidSemiflow(format!("lambda = {lambda}")));
    }
    check_unit_grid(x_grid)?;
    let times: Vec<f64> = x_grid.iter().map(|x| x.powf(2.0 * lambda)).collect();
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededStream::new(seed, i as u64).rng();
            let mut w = 0.0;
            let mut values = Vec::with_capacity(times.len());
            values.push(0.0);
            for k in 1..times.len() {
                w += (times[k] - times[k - 1]).sqrt() * standard_normal(&mut rng);
                values.push(w);
            }
            FunctionSample::new(x_grid.to_vec(), values)
        })
        .collect()
}

/// Stationary Ornstein–Uhlenbeck paths `ξ_t = e^t w(e^{-2t})` (unit
/// variance, correlation `e^{-|t-s|}`), sampled exactly by the AR(1)
/// recursion.
pub fn sample_ou(
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FunctionSample>, SemiflowError> {
    if t_grid.is_empty() || t_grid[0] < 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SemiflowError::InvalidParameter(
            "time grid must be nonnegative and strictly increasing".into(),
        ));
    }
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededStream::new(seed, i as u64).rng();
            let mut x = standard_normal(&mut rng);
            let mut values = Vec::with_capacity(t_grid.len());
            values.push(x);
            for w in t_grid.windows(2) {
                let rho = (-(w[1] - w[0])).exp();
                x = rho * x + (1.0 - rho * rho).sqrt() * standard_normal(&mut rng);
                values.push(x);
            }
            FunctionSample::new(t_grid.to_vec(), values)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceConfig {
    pub lambda: f64,
    pub t: f64,
    pub n_samples: usize,
    pub probes: Vec<f64>,
    /// Apply the wrong prefactor `e^{2λt}` (power check).
    #[serde(default)]
    pub corrupt_prefactor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: f64,
    pub ks_stat: f64,
    pub critical: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub probes: Vec<ProbeReport>,
    /// Per-probe level after Bonferroni correction.
    pub alpha: f64,
    pub invariant: bool,
}

/// Compares the marginals of `ξ` and `S^t ξ` at each probe with two
/// independent samples and a Bonferroni-corrected KS test.
///
/// The field is sampled on a grid containing both the probes and their
/// pre-images `e^{-t} x`, so the semiflow reads exact path values.
pub fn invariance_test(
    cfg: &InvarianceConfig,
    seed: u64,
) -> Result<InvarianceReport, SemiflowError> {
    let sf = if cfg.corrupt_prefactor {
        LinearMaturitySemiflow::corrupted(cfg.lambda)?
    } else {
        LinearMaturitySemiflow::new(cfg.lambda)?
    };
    if cfg.probes.is_empty() || cfg.probes.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
        return Err(SemiflowError::InvalidParameter(
            "probes must lie in (0, 1]".into(),
        ));
    }
    if !(cfg.t >= 0.0) {
        return Err(SemiflowError::NegativeTime(cfg.t));
    }
    let back = (-cfg.t).exp();
    let grid = node_union(cfg.probes.iter().flat_map(|&x| [x, back * x]));
    let root = SeededStream::new(seed, 0);
    let before = sample_invariant_field(
        cfg.lambda,
        &grid,
        cfg.n_samples,
        root.child(1, 0).master_seed,
    )?;
    let after_src = sample_invariant_field(
        cfg.lambda,
        &grid,
        cfg.n_samples,
        root.child(2, 0).master_seed,
    )?;
    let after = after_src
        .par_iter()
        .map(|v| sf.apply(v, cfg.t))
        .collect::<Result<Vec<_>, _>>()?;
    let alpha = INVARIANCE_ALPHA / cfg.probes.len() as f64;
    let mut probes = Vec::new();
    for &x in &cfg.probes {
        let a = before
            .iter()
            .map(|v| v.eval(x))
            .collect::<Result<Vec<_>, _>>()?;
        let b = after
            .iter()
            .map(|v| v.eval(x))
            .collect::<Result<Vec<_>, _>>()?;
        let r = ks_two_sample(&a, &b, alpha)?;
        probes.push(ProbeReport {
            probe: x,
            ks_stat: r.statistic,
            critical: r.critical_value,
            verdict: r.verdict,
        });
    }
    Ok(InvarianceReport {
        invariant: probes.iter().all(|p| p.verdict),
        probes,
        alpha,
    })
}

/// Sorted, deduplicated `{0} ∪ points`.
fn node_union<I: IntoIterator<Item = f64>>(points: I) -> Vec<f64> {
    let mut g: Vec<f64> = std::iter::once(0.0).chain(points).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// One condition `ξ(x) > level` (or `<` when `above` is false).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub x: f64,
    pub level: f64,
    #[serde(default = "yes")]
    pub above: bool,
}

fn yes() -> bool {
    true
}

impl Threshold {
    fn holds(&self, value: f64) -> bool {
        if self.above {
            value > self.level
        } else {
            value < self.level
        }
    }
}

/// An intersection of threshold conditions.
pub type Event = Vec<Threshold>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingRecord {
    pub t: f64,
    pub joint: f64,
    pub p_a: f64,
    pub p_b: f64,
    /// `joint − p_a p_b`.
    pub difference: f64,
    pub gap: f64,
    /// Delta-method standard error of `difference`.
    pub standard_error: f64,
}

/// Empirical `|P(S^t ξ ∈ A, ξ ∈ B) − P(A) P(B)|` along `t_grid` for the
/// invariant field of the linear semiflow.
pub fn mixing_correlation(
    lambda: f64,
    a: &Event,
    b: &Event,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MixingRecord>, SemiflowError> {
    let sf = LinearMaturitySemiflow::new(lambda)?;
    if a.is_empty() || b.is_empty() || n_samples < 2 {
        return Err(SemiflowError::InvalidParameter(
            "events need at least one condition and n_samples >= 2".into(),
        ));
    }
    if a.iter().chain(b).any(|c| !(c.x > 0.0 && c.x <= 1.0)) {
        return Err(SemiflowError::InvalidParameter(
            "probes must lie in (0, 1]".into(),
        ));
    }
    t_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if !(t >= 0.0) {
                return Err(SemiflowError::NegativeTime(t));
            }
            let back = (-t).exp();
            let grid = node_union(
                b.iter()
                    .map(|c| c.x)
                    .chain(a.iter().flat_map(|c| [c.x, back * c.x])),
            );
            let stream = SeededStream::new(seed, k as u64).child(3, 0).master_seed;
            let paths = sample_invariant_field(lambda, &grid, n_samples, stream)?;
            let mut n_a = 0usize;
            let mut n_b = 0usize;
            let mut n_ab = 0usize;
            let mut flags = Vec::with_capacity(n_samples);
            for p in &paths {
                let in_b = b.iter().try_fold(true, |acc, c| {
                    Ok::<_, SemiflowError>(acc && c.holds(p.eval(c.x)?))
                })?;
                let in_a = a.iter().try_fold(true, |acc, c| {
                    Ok::<_, SemiflowError>(acc && c.holds(sf.value_at(p, t, c.x)?))
                })?;
                n_a += usize::from(in_a);
                n_b += usize::from(in_b);
                n_ab += usize::from(in_a && in_b);
                flags.push((in_a, in_b));
            }
            let n = n_samples as f64;
            let (p_a, p_b, joint) = (n_a as f64 / n, n_b as f64 / n, n_ab as f64 / n);
            let difference = joint - p_a * p_b;
            let infl: Vec<f64> = flags
                .iter()
                .map(|&(ia, ib)| {
                    f64::from(u8::from(ia && ib))
                        - p_b * f64::from(u8::from(ia))
                        - p_a * f64::from(u8::from(ib))
                })
                .collect();
            let mean = infl.iter().sum::<f64>() / n;
            let var = infl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(MixingRecord {
                t,
                joint,
                p_a,
                p_b,
                difference,
                gap: difference.abs(),
                standard_error: (var / n).sqrt(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub count: usize,
    pub n: usize,
    pub probability: f64,
}

/// Fraction of standard Wiener paths with `lower < w < upper` at every node
/// of the shared grid on `[a, b]`, `a > 0`.
pub fn tube_positivity_check(
    lower: &FunctionSample,
    upper: &FunctionSample,
    n_samples: usize,
    seed: u64,
) -> Result<TubeReport, SemiflowError> {
    let grid = lower.grid();
    if grid != upper.grid() || !(grid[0] > 0.0) {
        return Err(SemiflowError::InvalidParameter(
            "tube bounds must share a grid on [a, b] with a > 0".into(),
        ));
    }
    if lower
        .values
        .iter()
        .zip(&upper.values)
        .any(|(f, g)| !(f < g))
    {
        return Err(SemiflowError::InvalidParameter(
            "lower bound must stay below upper".into(),
        ));
    }
    if n_samples == 0 {
        return Err(SemiflowError::InvalidParameter(
            "n_samples must be positive".into(),
        ));
    }
    let count = (0..n_samples)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = SeededStream::new(seed, i as u64).rng();
            let mut prev_t = 0.0;
            let mut w = 0.0;
            for (k, &t) in grid.iter().enumerate() {
                w += (t - prev_t).sqrt() * standard_normal(&mut rng);
                prev_t = t;
                if !(lower.values[k] < w && w < upper.values[k]) {
                    return false;
                }
            }
            true
        })
        .count();
    Ok(TubeReport {
        count,
        n: n_samples,
        probability: count as f64 / n_samples as f64,
    })
}
