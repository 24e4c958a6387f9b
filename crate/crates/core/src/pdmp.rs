//! Piecewise deterministic Markov processes: deterministic flows between
//! random jump times, with mode switches, optional point jumps and an
//! optional reflecting boundary.
//!
//! Jump times are drawn by thinning a Poisson clock of rate `q_max`, so the
//! law is exact for any state-dependent rate bounded by `q_max`. Flows are
//! integrated with fixed-step RK4. Ensembles run in parallel, particle `i`
//! using substream `i` of the master seed, so results do not depend on
//! scheduling.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastics::{l1_histogram_distance, Histogram, SeededStream, StatsError, StreamRng};

/// Default RK4 step; keeps the pure-decay example exact to about 1e-8.
pub const DEFAULT_STEP: f64 = 0.05;
/// Final window mass below which the Foguel check reports sweeping.
pub const SWEEP_MASS: f64 = 0.01;
/// Pairwise window-histogram L1 bound for a stable verdict.
pub const STABLE_L1: f64 = 0.05;
/// Histogram resolution used by the Foguel check.
pub const FOGUEL_BINS: usize = 10;
/// Tolerance for states sitting on the domain boundary after rounding.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdmpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rate {rate} at x = {x:?} in mode {mode} is outside [0, q_max = {q_max}]")]
    RateOutOfBounds {
        mode: usize,
        x: Vec<f64>,
        rate: f64,
        q_max: f64,
    },
    #[error("empty initial sample")]
    EmptySample,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One coordinate of the state space; a missing bound is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl Axis {
    pub fn bounded(lo: f64, hi: f64) -> Self {
        Self {
            lo: Some(lo),
            hi: Some(hi),
        }
    }

    pub fn half_line(lo: f64) -> Self {
        Self {
            lo: Some(lo),
            hi: None,
        }
    }

    fn lo_or(&self, v: f64) -> f64 {
        self.lo.unwrap_or(v)
    }

    fn hi_or(&self, v: f64) -> f64 {
        self.hi.unwrap_or(v)
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo_or(f64::NEG_INFINITY) - BOUNDARY_SLACK
            && x <= self.hi_or(f64::INFINITY) + BOUNDARY_SLACK
    }
}

/// Right-hand side of one coordinate of a mode's vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldComponent {
    /// `slope · x + offset`
    Affine { slope: f64, offset: f64 },
    /// `rate · x · (1 − x / capacity)`
    Logistic { rate: f64, capacity: f64 },
}

impl FieldComponent {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            FieldComponent::Affine { slope, offset } => slope * x + offset,
            FieldComponent::Logistic { rate, capacity } => rate * x * (1.0 - x / capacity),
        }
    }
}

/// Jump intensity of a mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rate {
    Constant {
        value: f64,
    },
    /// `offset + Σ slopes[k] · x[k]`
    Affine {
        offset: f64,
        slopes: Vec<f64>,
    },
}

impl Rate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Rate::Constant { value } => *value,
            Rate::Affine { offset, slopes } => {
                offset + slopes.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub field: Vec<FieldComponent>,
    pub rate: Rate,
}

/// Post-jump state update applied at every accepted jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointJump {
    Reset { to: Vec<f64> },
    Scale { factor: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

/// What happens when a flow reaches the domain boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Mirror the state back into the domain, optionally switching mode.
    Reflect {
        #[serde(default)]
        switch_to: Option<usize>,
    },
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmpModel {
    pub domain: Vec<Axis>,
    pub modes: Vec<Mode>,
    pub q_max: f64,
    /// Row `i` holds the mode-transition probabilities out of mode `i`.
    pub switch: Vec<Vec<f64>>,
    #[serde(default)]
    pub point_jump: Option<PointJump>,
    #[serde(default)]
    pub boundary: Option<BoundaryRule>,
    #[serde(default = "default_step")]
    pub step: f64,
}

impl PdmpModel {
    /// Switching between `v₀ = −x` (leaving at rate `a`) and `v₁ = 1 − x`
    /// (leaving at rate `b`) on `[0, 1]`.
    pub fn two_mode(a: f64, b: f64) -> Self {
        Self {
            domain: vec![Axis::bounded(0.0, 1.0)],
            modes: vec![
                Mode {
                    field: vec![FieldComponent::Affine {
                        slope: -1.0,
                        offset: 0.0,
                    }],
                    rate: Rate::Constant { value: a },
                },
                Mode {
                    field: vec![FieldComponent::Affine {
                        slope: -1.0,
                        offset: 1.0,
                    }],
                    rate: Rate::Constant { value: b },
                },
            ],
            q_max: a.max(b),
            switch: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            point_jump: None,
            boundary: None,
            step: DEFAULT_STEP,
        }
    }

    /// A single deterministic flow `dx/dt = component(x)`.
    pub fn flow(axis: Axis, component: FieldComponent) -> Self {
        Self {
            domain: vec![axis],
            modes: vec![Mode {
                field: vec![component],
                rate: Rate::Constant { value: 0.0 },
            }],
            q_max: 0.0,
            switch: vec![vec![1.0]],
            point_jump: None,
            boundary: None,
            step: DEFAULT_STEP,
        }
    }

    /// Unit-speed drift to the right on `[0, ∞)`.
    pub fn drift() -> Self {
        Self::flow(
            Axis::half_line(0.0),
            FieldComponent::Affine {
                slope: 0.0,
                offset: 1.0,
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.domain.iter().zip(x).all(|(a, v)| a.contains(*v))
    }

    /// Structural checks plus sampled rate bounds. Flows that point out of
    /// the domain without a boundary rule are only logged, since escape is
    /// a legitimate outcome that simulations record.
    pub fn validate(&self) -> Result<(), PdmpError> {
        let bad = |m: String| Err(PdmpError::InvalidModel(m));
        let d = self.dim();
        if d == 0 {
            return bad("domain has no coordinates".into());
        }
        for a in &self.domain {
            if let (Some(lo), Some(hi)) = (a.lo, a.hi) {
                if !(hi > lo) {
                    return bad(format!("empty axis [{lo}, {hi}]"));
                }
            }
        }
        if self.modes.is_empty() {
            return bad("no modes".into());
        }
        if !(self.q_max >= 0.0) || !self.q_max.is_finite() {
            return bad(format!(
                "q_max = {} must be finite and nonnegative",
                self.q_max
            ));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return bad(format!("integration step {} must be positive", self.step));
        }
        let m = self.modes.len();
        for (i, mode) in self.modes.iter().enumerate() {
            if mode.field.len() != d {
                return bad(format!(
                    "mode {i} has {} field components, domain has {d}",
                    mode.field.len()
                ));
            }
            if let Rate::Affine { slopes, .. } = &mode.rate {
                if slopes.len() != d {
                    return bad(format!(
                        "mode {i} rate has {} slopes, domain has {d}",
                        slopes.len()
                    ));
                }
            }
        }
        if self.switch.len() != m {
            return bad(format!(
                "switch matrix has {} rows for {m} modes",
                self.switch.len()
            ));
        }
        for (i, row) in self.switch.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != m || row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return bad(format!("switch row {i} is not a probability vector"));
            }
        }
        match &self.point_jump {
            Some(PointJump::Reset { to }) if !self.contains(to) => {
                return bad("reset point lies outside the domain".into())
            }
            Some(PointJump::Scale { factor }) if factor.len() != d => {
                return bad("scale factor has the wrong dimension".into())
            }
            Some(PointJump::Uniform { lo, hi })
                if lo.len() != d
                    || hi.len() != d
                    || !self.contains(lo)
                    || !self.contains(hi)
                    || lo.iter().zip(hi).any(|(a, b)| !(b >= a)) =>
            {
                return bad("uniform jump box must be a nonempty box inside the domain".into())
            }
            _ => {}
        }
        if let Some(BoundaryRule::Reflect { switch_to: Some(j) }) = self.boundary {
            if j >= m {
                return bad(format!("boundary switches to unknown mode {j}"));
            }
        }
        for x in self.probe_points() {
            for (i, mode) in self.modes.iter().enumerate() {
                let q = mode.rate.eval(&x);
                if !(q >= 0.0) || q > self.q_max * (1.0 + 1e-12) {
                    return Err(PdmpError::RateOutOfBounds {
                        mode: i,
                        x,
                        rate: q,
                        q_max: self.q_max,
                    });
                }
            }
        }
        if self.boundary.is_none() {
            for (i, mode) in self.modes.iter().enumerate() {
                for (k, (axis, c)) in self.domain.iter().zip(&mode.field).enumerate() {
                    let out_lo = axis.lo.is_some_and(|lo| c.eval(lo) < 0.0);
                    let out_hi = axis.hi.is_some_and(|hi| c.eval(hi) > 0.0);
                    if out_lo || out_hi {
                        log::warn!("mode {i} leaves the domain through axis {k}; paths may escape");
                    }
                }
            }
        }
        Ok(())
    }

    /// Deterministic sample of the (truncated) domain used for rate checks.
    fn probe_points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let span = |a: &Axis| {
            let lo = a.lo_or(a.hi.map_or(-1e3, |h| h - 1e3));
            let hi = a.hi_or(lo + 1e3);
            (lo, hi)
        };
        let steps = if d == 1 { 256 } else { 16 };
        let mut out = Vec::new();
        let total = (steps + 1usize).pow(d.min(3) as u32);
        for idx in 0..total {
            let mut rem = idx;
            let x = self
                .domain
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let (lo, hi) = span(a);
                    if k >= 3 {
                        return 0.5 * (lo + hi);
                    }
                    let i = rem % (steps + 1);
                    rem /= steps + 1;
                    lo + (hi - lo) * i as f64 / steps as f64
                })
                .collect();
            out.push(x);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmpState {
    pub x: Vec<f64>,
    pub mode: usize,
    pub t: f64,
}

impl PdmpState {
    pub fn new(x: Vec<f64>, mode: usize) -> Self {
        Self { x, mode, t: 0.0 }
    }

    pub fn scalar(x: f64, mode: usize) -> Self {
        Self::new(vec![x], mode)
    }
}

fn check_state(model: &PdmpModel, s: &PdmpState) -> Result<(), PdmpError> {
    if s.mode >= model.modes.len() {
        return Err(PdmpError::InvalidState(format!(
            "mode {} does not exist",
            s.mode
        )));
    }
    if !model.contains(&s.x) {
        return Err(PdmpError::InvalidState(format!(
            "{:?} is outside the domain",
            s.x
        )));
    }
    if !s.t.is_finite() {
        return Err(PdmpError::InvalidState("non-finite time".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    DomainEscape { t: f64, x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub x: Vec<f64>,
}

/// Dense record of one path: one sample per integration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub modes: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub jumps: Vec<JumpRecord>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn final_state(&self) -> PdmpState {
        let k = self.times.len() - 1;
        PdmpState {
            x: self.states[k].clone(),
            mode: self.modes[k],
            t: self.times[k],
        }
    }

    /// `t,mode,x0,x1,...`
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, |s| s.len());
        let mut s = String::from("t,mode");
        for k in 0..d {
            let _ = write!(s, ",x{k}");
        }
        s.push('\n');
        for ((t, m), x) in self.times.iter().zip(&self.modes).zip(&self.states) {
            let _ = write!(s, "{t},{m}");
            for v in x {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

enum Event<'a> {
    Step {
        dt: f64,
        mode: usize,
        before: &'a [f64],
        after: &'a [f64],
        t: f64,
    },
    Jump {
        t: f64,
        from: usize,
        to: usize,
        x: &'a [f64],
    },
}

/// Reusable RK4 scratch space for one particle.
struct Integrator<'m> {
    model: &'m PdmpModel,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    prev: Vec<f64>,
}

impl<'m> Integrator<'m> {
    fn new(model: &'m PdmpModel) -> Self {
        let d = model.dim();
        Self {
            model,
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
            prev: vec![0.0; d],
        }
    }

    fn field(model: &PdmpModel, mode: usize, x: &[f64], out: &mut [f64]) {
        for ((o, c), v) in out.iter_mut().zip(&model.modes[mode].field).zip(x) {
            *o = c.eval(*v);
        }
    }

    fn rk4(&mut self, mode: usize, x: &mut [f64], h: f64) {
        let m = self.model;
        Self::field(m, mode, x, &mut self.k[0]);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k[0][i];
        }
        Self::field(m, mode, &self.tmp, &mut self.k[1]);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k[1][i];
        }
        Self::field(m, mode, &self.tmp, &mut self.k[2]);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + h * self.k[2][i];
        }
        Self::field(m, mode, &self.tmp, &mut self.k[3]);
        for i in 0..x.len() {
            x[i] +=
                h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }

    /// Applies the boundary rule; returns false if the state escaped.
    fn enforce_domain(&self, s: &mut PdmpState) -> bool {
        let mut hit = false;
        for (a, v) in self.model.domain.iter().zip(s.x.iter_mut()) {
            if a.contains(*v) {
                if let Some(lo) = a.lo {
                    *v = v.max(lo);
                }
                if let Some(hi) = a.hi {
                    *v = v.min(hi);
                }
                continue;
            }
            match self.model.boundary {
                None => return false,
                Some(BoundaryRule::Reflect { .. }) => {
                    hit = true;
                    if let Some(lo) = a.lo.filter(|lo| *v < *lo) {
                        *v = 2.0 * lo - *v;
                    } else if let Some(hi) = a.hi.filter(|hi| *v > *hi) {
                        *v = 2.0 * hi - *v;
                    }
                    *v = v.clamp(a.lo_or(f64::NEG_INFINITY), a.hi_or(f64::INFINITY));
                }
            }
        }
        if hit {
            if let Some(BoundaryRule::Reflect { switch_to: Some(j) }) = self.model.boundary {
                s.mode = j;
            }
        }
        true
    }

    /// Integrates the current mode's flow up to time `stop`.
    fn flow<F: FnMut(Event)>(&mut self, s: &mut PdmpState, stop: f64, obs: &mut F) -> bool {
        let dt = stop - s.t;
        if dt <= 0.0 {
            return true;
        }
        let n = (dt / self.model.step).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let t0 = s.t;
        for i in 0..n {
            self.prev.copy_from_slice(&s.x);
            let mode = s.mode;
            self.rk4(mode, &mut s.x, h);
            s.t = if i + 1 == n {
                stop
            } else {
                t0 + (i + 1) as f64 * h
            };
            if !self.enforce_domain(s) {
                return false;
            }
            obs(Event::Step {
                dt: h,
                mode,
                before: &self.prev,
                after: &s.x,
                t: s.t,
            });
        }
        true
    }

    fn jump<F: FnMut(Event)>(
        &mut self,
        s: &mut PdmpState,
        rng: &mut StreamRng,
        obs: &mut F,
    ) -> bool {
        let from = s.mode;
        let row = &self.model.switch[from];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut to = row.len() - 1;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                to = j;
                break;
            }
        }
        while row[to] == 0.0 && to > 0 {
            to -= 1;
        }
        s.mode = to;
        match &self.model.point_jump {
            None => {}
            Some(PointJump::Reset { to }) => s.x.copy_from_slice(to),
            Some(PointJump::Scale { factor }) => {
                s.x.iter_mut().zip(factor).for_each(|(v, f)| *v *= f)
            }
            Some(PointJump::Uniform { lo, hi }) => {
                for ((v, a), b) in s.x.iter_mut().zip(lo).zip(hi) {
                    *v = a + (b - a) * rng.random::<f64>();
                }
            }
        }
        if !self.enforce_domain(s) {
            return false;
        }
        obs(Event::Jump {
            t: s.t,
            from,
            to,
            x: &s.x,
        });
        true
    }

    /// Runs the process until `until`; `Ok(false)` means the state escaped.
    fn advance<F: FnMut(Event)>(
        &mut self,
        s: &mut PdmpState,
        until: f64,
        rng: &mut StreamRng,
        obs: &mut F,
    ) -> Result<bool, PdmpError> {
        let q_max = self.model.q_max;
        while s.t < until {
            let next = if q_max > 0.0 {
                let u: f64 = rng.random();
                s.t - (1.0 - u).ln() / q_max
            } else {
                f64::INFINITY
            };
            let stop = next.min(until);
            if !self.flow(s, stop, obs) {
                return Ok(false);
            }
            if next <= until {
                let q = self.model.modes[s.mode].rate.eval(&s.x);
                if !(q >= 0.0) || q > q_max * (1.0 + 1e-12) {
                    return Err(PdmpError::RateOutOfBounds {
                        mode: s.mode,
                        x: s.x.clone(),
                        rate: q,
                        q_max,
                    });
                }
                if rng.random::<f64>() * q_max < q && !self.jump(s, rng, obs) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Simulates one path on `[s0.t, s0.t + horizon]`. Leaving the domain
/// without a boundary rule truncates the path and is recorded in
/// [`Trajectory::termination`].
pub fn simulate_path(
    model: &PdmpModel,
    s0: &PdmpState,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory, PdmpError> {
    model.validate()?;
    check_state(model, s0)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(PdmpError::InvalidParameter(format!("horizon {horizon}")));
    }
    let mut rng = SeededStream::new(seed, 0).rng();
    let mut s = s0.clone();
    let mut tr = Trajectory {
        times: vec![s.t],
        modes: vec![s.mode],
        states: vec![s.x.clone()],
        jumps: Vec::new(),
        termination: Termination::Horizon,
    };
    let mut integ = Integrator::new(model);
    let ok = integ.advance(&mut s, s0.t + horizon, &mut rng, &mut |e| match e {
        Event::Step { mode, after, t, .. } => {
            tr.times.push(t);
            tr.modes.push(mode);
            tr.states.push(after.to_vec());
        }
        Event::Jump { t, from, to, x } => {
            tr.jumps.push(JumpRecord {
                t,
                from,
                to,
                x: x.to_vec(),
            });
            tr.times.push(t);
            tr.modes.push(to);
            tr.states.push(x.to_vec());
        }
    })?;
    if !ok {
        tr.termination = Termination::DomainEscape {
            t: s.t,
            x: s.x.clone(),
        };
    }
    Ok(tr)
}

/// Histogram window on the first state coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Window {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, PdmpError> {
        Histogram::empty(lo, hi, bins)?;
        Ok(Self { lo, hi, bins })
    }
}

/// Histogram of the first coordinate, in total and per mode. Per-mode
/// densities share the total normalization, so they add up to the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub total: Histogram,
    pub per_mode: Vec<Histogram>,
    pub sample_count: usize,
    /// Particles (or, for time averages, paths) that left the domain.
    pub escaped: usize,
}

impl EmpiricalDensity {
    fn from_states(
        states: &[PdmpState],
        escaped: usize,
        modes: usize,
        w: Window,
    ) -> Result<Self, PdmpError> {
        let n = states.len() + escaped;
        let total_weight = n as f64;
        let obs = |m: Option<usize>| {
            states
                .iter()
                .filter(move |s| m.is_none_or(|m| s.mode == m))
                .map(|s| (s.x[0], 1.0))
        };
        let mut total = Histogram::from_weighted(w.lo, w.hi, w.bins, total_weight, obs(None))?;
        total.sample_count = n;
        let per_mode = (0..modes)
            .map(|m| Histogram::from_weighted(w.lo, w.hi, w.bins, total_weight, obs(Some(m))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            total,
            per_mode,
            sample_count: n,
            escaped,
        })
    }

    pub fn mass(&self) -> f64 {
        self.total.mass()
    }
}

/// Final states of an ensemble; escaped particles are counted, not kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub states: Vec<PdmpState>,
    pub escaped: usize,
}

/// Advances every particle by `t`, particle `i` on substream `i`.
pub fn evolve_sample(
    model: &PdmpModel,
    initial: &[PdmpState],
    t: f64,
    seed: u64,
) -> Result<EnsembleOutcome, PdmpError> {
    model.validate()?;
    if initial.is_empty() {
        return Err(PdmpError::EmptySample);
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(PdmpError::InvalidParameter(format!("time {t}")));
    }
    for s in initial {
        check_state(model, s)?;
    }
    let results: Vec<Option<PdmpState>> = initial
        .par_iter()
        .enumerate()
        .map_init(
            || Integrator::new(model),
            |integ, (i, s0)| {
                let mut rng = SeededStream::new(seed, i as u64).rng();
                let mut s = s0.clone();
                let ok = integ.advance(&mut s, s0.t + t, &mut rng, &mut |_| {})?;
                Ok(ok.then_some(s))
            },
        )
        .collect::<Result<_, PdmpError>>()?;
    let escaped = results.iter().filter(|r| r.is_none()).count();
    Ok(EnsembleOutcome {
        states: results.into_iter().flatten().collect(),
        escaped,
    })
}

/// Histogram of the ensemble after time `t`.
pub fn evolve_density(
    model: &PdmpModel,
    initial: &[PdmpState],
    t: f64,
    window: Window,
    seed: u64,
) -> Result<EmpiricalDensity, PdmpError> {
    let out = evolve_sample(model, initial, t, seed)?;
    EmpiricalDensity::from_states(&out.states, out.escaped, model.modes.len(), window)
}

/// Time-average occupation of a single path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryEstimate {
    pub density: EmpiricalDensity,
    /// Averaging time actually covered after burn-in.
    pub observed_time: f64,
    pub escaped: bool,
}

/// Occupation histogram of one path over `[burn_in, burn_in + horizon]`.
/// An escaping path yields the partial average with `escaped` set.
pub fn stationary_estimate(
    model: &PdmpModel,
    s0: &PdmpState,
    burn_in: f64,
    horizon: f64,
    window: Window,
    seed: u64,
) -> Result<StationaryEstimate, PdmpError> {
    model.validate()?;
    check_state(model, s0)?;
    if !(burn_in >= 0.0) || !(horizon > 0.0) || !horizon.is_finite() || !burn_in.is_finite() {
        return Err(PdmpError::InvalidParameter(format!(
            "burn_in {burn_in}, horizon {horizon}"
        )));
    }
    let mut rng = SeededStream::new(seed, 0).rng();
    let mut integ = Integrator::new(model);
    let mut s = s0.clone();
    let ok = integ.advance(&mut s, s0.t + burn_in, &mut rng, &mut |_| {})?;
    let modes = model.modes.len();
    let bins = window.bins;
    let probe = Histogram::empty(window.lo, window.hi, bins)?;
    let mut acc = vec![vec![0.0; bins]; modes];
    let mut observed = 0.0;
    let mut steps = 0usize;
    let mut escaped = !ok;
    if ok {
        let start = s.t;
        let ok2 = integ.advance(&mut s, start + horizon, &mut rng, &mut |e| {
            if let Event::Step {
                dt,
                mode,
                before,
                after,
                ..
            } = e
            {
                steps += 1;
                observed += dt;
                for x in [before[0], after[0]] {
                    if let Some(k) = probe.cell_of(x) {
                        acc[mode][k] += 0.5 * dt;
                    }
                }
            }
        })?;
        escaped = !ok2;
    }
    let scale = if observed > 0.0 {
        1.0 / (observed * probe.cell_width())
    } else {
        0.0
    };
    let per_mode: Vec<Histogram> = acc
        .iter()
        .map(|a| Histogram {
            lo: window.lo,
            hi: window.hi,
            density: a.iter().map(|v| v * scale).collect(),
            sample_count: steps,
        })
        .collect();
    let total = Histogram {
        lo: window.lo,
        hi: window.hi,
        density: (0..bins)
            .map(|k| per_mode.iter().map(|h| h.density[k]).sum())
            .collect(),
        sample_count: steps,
    };
    Ok(StationaryEstimate {
        density: EmpiricalDensity {
            total,
            per_mode,
            sample_count: steps,
            escaped: usize::from(escaped),
        },
        observed_time: observed,
        escaped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoguelVerdict {
    Stable,
    Sweeping,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoguelReport {
    pub verdict: FoguelVerdict,
    pub horizons: Vec<f64>,
    pub laws: Vec<String>,
    /// `mass_curves[law][k]`: fraction of particles in the window at
    /// `horizons[k]`.
    pub mass_curves: Vec<Vec<f64>>,
    /// Largest pairwise L1 distance between window histograms at the last
    /// horizon.
    pub max_pairwise_l1: f64,
    pub n_particles: usize,
}

fn mass_se(m: f64, n: usize) -> f64 {
    (m * (1.0 - m) / n as f64).sqrt().max(1.0 / n as f64)
}

type InitialLaw = Box<dyn Fn(&mut StreamRng) -> f64 + Sync>;

/// Numerical evidence for the stable/sweeping alternative: window-mass
/// curves for three initial laws (uniform on the window, and point masses
/// at its first and third quarter) with modes drawn uniformly.
pub fn stability_or_sweeping(
    model: &PdmpModel,
    window: (f64, f64),
    horizons: &[f64],
    n_particles: usize,
    seed: u64,
) -> Result<FoguelReport, PdmpError> {
    model.validate()?;
    if model.dim() != 1 {
        return Err(PdmpError::InvalidParameter(
            "the Foguel check supports one-dimensional models".into(),
        ));
    }
    if horizons.is_empty() || horizons.windows(2).any(|w| !(w[1] > w[0])) || !(horizons[0] >= 0.0) {
        return Err(PdmpError::InvalidParameter(
            "horizons must be increasing".into(),
        ));
    }
    if n_particles == 0 {
        return Err(PdmpError::EmptySample);
    }
    let win = Window::new(window.0, window.1, FOGUEL_BINS)?;
    let axis = model.domain[0];
    let a = win.lo.max(axis.lo_or(f64::NEG_INFINITY));
    let b = win.hi.min(axis.hi_or(f64::INFINITY));
    if !(b > a) {
        return Err(PdmpError::InvalidParameter(
            "window misses the domain".into(),
        ));
    }
    let modes = model.modes.len();
    let laws: Vec<(String, InitialLaw)> = vec![
        (
            format!("uniform[{a},{b}]"),
            Box::new(move |r: &mut StreamRng| a + (b - a) * r.random::<f64>()),
        ),
        (
            format!("point({})", a + 0.25 * (b - a)),
            Box::new(move |_: &mut StreamRng| a + 0.25 * (b - a)),
        ),
        (
            format!("point({})", a + 0.75 * (b - a)),
            Box::new(move |_: &mut StreamRng| a + 0.75 * (b - a)),
        ),
    ];
    let mut mass_curves = Vec::new();
    let mut finals = Vec::new();
    for (li, (_, law)) in laws.iter().enumerate() {
        let stream = SeededStream::new(seed, 0).child(1, li as u64);
        let positions: Vec<Vec<Option<f64>>> = (0..n_particles)
            .into_par_iter()
            .map_init(
                || Integrator::new(model),
                |integ, i| {
                    let mut rng = stream.child(2, i as u64).rng();
                    let x = law(&mut rng);
                    let mode = rng.random_range(0..modes);
                    let mut s = PdmpState::scalar(x, mode);
                    let mut out = Vec::with_capacity(horizons.len());
                    let mut alive = true;
                    for &h in horizons {
                        if alive {
                            alive = integ.advance(&mut s, h, &mut rng, &mut |_| {})?;
                        }
                        out.push(alive.then_some(s.x[0]));
                    }
                    Ok(out)
                },
            )
            .collect::<Result<_, PdmpError>>()?;
        let curve: Vec<f64> = (0..horizons.len())
            .map(|k| {
                positions
                    .iter()
                    .filter(|p| p[k].is_some_and(|x| x >= win.lo && x <= win.hi))
                    .count() as f64
                    / n_particles as f64
            })
            .collect();
        let last = horizons.len() - 1;
        let hist = Histogram::from_weighted(
            win.lo,
            win.hi,
            win.bins,
            n_particles as f64,
            positions.iter().filter_map(|p| p[last]).map(|x| (x, 1.0)),
        )?;
        mass_curves.push(curve);
        finals.push(hist);
    }
    let mut max_l1: f64 = 0.0;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            max_l1 = max_l1.max(l1_histogram_distance(&finals[i], &finals[j])?);
        }
    }
    let verdict = foguel_verdict(&mass_curves, max_l1, n_particles);
    Ok(FoguelReport {
        verdict,
        horizons: horizons.to_vec(),
        laws: laws.into_iter().map(|l| l.0).collect(),
        mass_curves,
        max_pairwise_l1: max_l1,
        n_particles,
    })
}

fn foguel_verdict(curves: &[Vec<f64>], max_l1: f64, n: usize) -> FoguelVerdict {
    let len = curves[0].len();
    if len < 2 {
        return FoguelVerdict::Inconclusive;
    }
    let band = |a: f64, b: f64| 3.0 * (mass_se(a, n).powi(2) + mass_se(b, n).powi(2)).sqrt();
    let sweeping = curves
        .iter()
        .all(|c| c[len - 1] < SWEEP_MASS && c.windows(2).all(|w| w[1] <= w[0] + band(w[0], w[1])));
    if sweeping {
        return FoguelVerdict::Sweeping;
    }
    let settled = |a: f64, b: f64| (a - b).abs() <= band(a, b).max(0.02);
    let finals: Vec<f64> = curves.iter().map(|c| c[len - 1]).collect();
    let stable = curves
        .iter()
        .all(|c| c[len - 1] > SWEEP_MASS && settled(c[len - 1], c[len - 2]))
        && finals
            .iter()
            .all(|a| finals.iter().all(|b| settled(*a, *b)))
        && max_l1 < STABLE_L1;
    if stable {
        FoguelVerdict::Stable
    } else {
        FoguelVerdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartProbe {
    pub x: f64,
    pub mode: usize,
    pub min_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProbe {
    /// Minimum over starting points and target cells of the estimated
    /// transition density; positive values are evidence, not proof.
    pub eta_hat: f64,
    pub starts: Vec<StartProbe>,
    pub target: (f64, f64),
    pub bins: usize,
}

/// Estimates `inf_{x ∈ B(x0, eps)} inf_{y ∈ target} k(t, x, y)` from
/// histograms of `n_particles` paths per (start point, mode) pair, with
/// five start points spread over the ball.
#[allow(clippy::too_many_arguments)]
pub fn kernel_positivity_probe(
    model: &PdmpModel,
    x0: f64,
    eps: f64,
    t: f64,
    n_particles: usize,
    target: (f64, f64),
    bins: usize,
    seed: u64,
) -> Result<KernelProbe, PdmpError> {
    model.validate()?;
    if model.dim() != 1 {
        return Err(PdmpError::InvalidParameter(
            "the kernel probe supports one-dimensional models".into(),
        ));
    }
    if !(eps >= 0.0) || !(t >= 0.0) || n_particles == 0 {
        return Err(PdmpError::InvalidParameter(format!(
            "eps {eps}, t {t}, n_particles {n_particles}"
        )));
    }
    let axis = model.domain[0];
    if !(target.1 > target.0) || !axis.contains(target.0) || !axis.contains(target.1) {
        return Err(PdmpError::InvalidParameter(
            "target must lie in the domain".into(),
        ));
    }
    let window = Window::new(target.0, target.1, bins)?;
    let mut starts = Vec::new();
    let mut idx = 0u64;
    for f in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let x = (x0 + f * eps).clamp(axis.lo_or(f64::NEG_INFINITY), axis.hi_or(f64::INFINITY));
        for mode in 0..model.modes.len() {
            let init = vec![PdmpState::scalar(x, mode); n_particles];
            let d = evolve_density(
                model,
                &init,
                t,
                window,
                crate::stochastics::derive_seed(seed, idx),
            )?;
            idx += 1;
            let min_density = d
                .total
                .density
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            starts.push(StartProbe {
                x,
                mode,
                min_density,
            });
        }
    }
    let eta_hat = starts
        .iter()
        .map(|s| s.min_density)
        .fold(f64::INFINITY, f64::min);
    Ok(KernelProbe {
        eta_hat,
        starts,
        target,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> PdmpModel {
        PdmpModel::flow(
            Axis::bounded(0.0, 2.0),
            FieldComponent::Affine {
                slope: -1.0,
                offset: 0.0,
            },
        )
    }

    #[test]
    fn pure_ode_matches_exponential() {
        let tr = simulate_path(&decay(), &PdmpState::scalar(1.0, 0), 1.0, 0).unwrap();
        let x = tr.final_state().x[0];
        assert!((x - (-1.0f64).exp()).abs() < 1e-6);
        assert!(tr.jumps.is_empty());
        assert_eq!(tr.final_state().t, 1.0);
    }

    #[test]
    fn jump_counts_are_poisson() {
        let m = PdmpModel::two_mode(1.0, 1.0);
        let counts: Vec<f64> = (0..200)
            .map(|s| {
                simulate_path(&m, &PdmpState::scalar(0.5, 0), 100.0, s)
                    .unwrap()
                    .jumps
                    .len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        assert!(
            (mean - 100.0).abs() < 3.0 * (100.0f64 / 200.0).sqrt(),
            "mean {mean}"
        );
        let one = counts[0];
        assert!((one - 100.0).abs() < 3.0 * 10.0);
    }

    #[test]
    fn seed_determinism() {
        let m = PdmpModel::two_mode(2.0, 1.0);
        let a = simulate_path(&m, &PdmpState::scalar(0.3, 1), 20.0, 42).unwrap();
        let b = simulate_path(&m, &PdmpState::scalar(0.3, 1), 20.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&m, &PdmpState::scalar(0.3, 1), 20.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn escape_is_recorded() {
        let m = PdmpModel::flow(
            Axis::bounded(0.0, 1.0),
            FieldComponent::Affine {
                slope: 0.0,
                offset: 1.0,
            },
        );
        let tr = simulate_path(&m, &PdmpState::scalar(0.5, 0), 2.0, 0).unwrap();
        match tr.termination {
            Termination::DomainEscape { t, .. } => assert!(t > 0.5 && t < 0.5 + 0.06),
            _ => panic!("expected escape"),
        }
    }

    #[test]
    fn reflecting_boundary_keeps_state_inside() {
        let mut m = PdmpModel::two_mode(1.0, 1.0);
        m.modes[1].field[0] = FieldComponent::Affine {
            slope: 0.0,
            offset: 1.0,
        };
        m.modes[0].field[0] = FieldComponent::Affine {
            slope: 0.0,
            offset: -1.0,
        };
        m.boundary = Some(BoundaryRule::Reflect { switch_to: None });
        let tr = simulate_path(&m, &PdmpState::scalar(0.5, 1), 50.0, 3).unwrap();
        assert_eq!(tr.termination, Termination::Horizon);
        assert!(tr.states.iter().all(|x| (0.0..=1.0).contains(&x[0])));
    }

    #[test]
    fn validation_rejects_bad_models() {
        let mut m = PdmpModel::two_mode(1.0, 2.0);
        m.q_max = 1.5;
        assert!(matches!(
            m.validate(),
            Err(PdmpError::RateOutOfBounds { .. })
        ));
        let mut m = PdmpModel::two_mode(1.0, 1.0);
        m.switch[0] = vec![0.5, 0.6];
        assert!(matches!(m.validate(), Err(PdmpError::InvalidModel(_))));
        assert!(matches!(
            simulate_path(
                &PdmpModel::two_mode(1.0, 1.0),
                &PdmpState::scalar(1.5, 0),
                1.0,
                0
            ),
            Err(PdmpError::InvalidState(_))
        ));
    }

    #[test]
    fn zero_time_evolution_is_initial_histogram() {
        let m = PdmpModel::two_mode(1.0, 1.0);
        let init: Vec<PdmpState> = (0..100)
            .map(|i| PdmpState::scalar(i as f64 / 99.0, i % 2))
            .collect();
        let w = Window::new(0.0, 1.0, 10).unwrap();
        let d = evolve_density(&m, &init, 0.0, w, 1).unwrap();
        let direct = Histogram::from_samples(0.0, 1.0, 10, init.iter().map(|s| s.x[0])).unwrap();
        assert_eq!(d.total.density, direct.density);
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drift_leaves_window() {
        let m = PdmpModel::drift();
        let init: Vec<PdmpState> = (0..200)
            .map(|i| PdmpState::scalar(i as f64 / 199.0, 0))
            .collect();
        let d = evolve_density(&m, &init, 10.0, Window::new(0.0, 5.0, 10).unwrap(), 0).unwrap();
        assert_eq!(d.mass(), 0.0);
    }

    #[test]
    fn equilibrium_occupation_is_point_mass() {
        let m = PdmpModel::flow(
            Axis::bounded(0.0, 1.0),
            FieldComponent::Affine {
                slope: -1.0,
                offset: 0.5,
            },
        );
        let w = Window::new(0.0, 1.0, 25).unwrap();
        let e = stationary_estimate(&m, &PdmpState::scalar(0.9, 0), 40.0, 100.0, w, 0).unwrap();
        let k = e.density.total.cell_of(0.5).unwrap();
        assert!((e.density.total.density[k] * e.density.total.cell_width() - 1.0).abs() < 1e-12);
        assert!(!e.escaped);
    }

    #[test]
    fn foguel_short_horizon_is_inconclusive() {
        let r = stability_or_sweeping(&PdmpModel::drift(), (0.0, 10.0), &[5.0], 100, 0).unwrap();
        assert_eq!(r.verdict, FoguelVerdict::Inconclusive);
        let r = stability_or_sweeping(&PdmpModel::drift(), (0.0, 10.0), &[5.0, 20.0, 40.0], 200, 0)
            .unwrap();
        assert_eq!(r.verdict, FoguelVerdict::Sweeping);
    }

    #[test]
    fn deterministic_kernel_has_no_density() {
        let r = kernel_positivity_probe(&decay(), 1.0, 0.05, 1.0, 200, (0.0, 0.3), 10, 0).unwrap();
        assert_eq!(r.eta_hat, 0.0);
        let r = kernel_positivity_probe(
            &PdmpModel::two_mode(1.0, 1.0),
            0.5,
            0.05,
            0.0,
            100,
            (0.7, 0.9),
            4,
            0,
        )
        .unwrap();
        assert_eq!(r.eta_hat, 0.0);
    }

    #[test]
    fn trajectory_csv_layout() {
        let tr = simulate_path(&decay(), &PdmpState::scalar(1.0, 0), 0.1, 0).unwrap();
        let csv = tr.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "t,mode,x0");
        assert_eq!(csv.lines().count(), 1 + tr.times.len());
    }
}
