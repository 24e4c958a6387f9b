//! Piecewise-monotone interval maps.
//!
//! A [`PiecewiseMap`] is a finite list of closed-form monotone branches that
//! partition a closed interval. Because each branch is monotone, the image of
//! a closed interval under a branch is the closed interval spanned by the two
//! endpoint values, which makes [`image`] exact up to rounding and lets
//! [`check_covering`] decide the Lasota–Yorke covering condition
//! `A ∪ B ⊆ S^t0(A) ∩ S^t0(B)` without sampling.
//!
//! At a point shared by two branches the left branch is used.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastics::SeededStream;

/// Endpoint slack used when testing set containment.
pub const COVERING_TOLERANCE: f64 = 1e-12;

/// Slack allowed when checking that branch intervals tile the domain.
const PARTITION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("map has no branches")]
    NoBranches,
    #[error("branches do not tile the domain: gap or overlap near {at}")]
    BadPartition { at: f64 },
    #[error("branch {index} is not strictly monotone on [{lo}, {hi}]")]
    NotMonotone { index: usize, lo: f64, hi: f64 },
    #[error("branch {index} is not finite at its endpoints")]
    NotEvaluable { index: usize },
    #[error("sets A and B must be nonempty")]
    EmptySet,
    #[error("sets A and B are not disjoint")]
    Overlap,
    #[error("set is not contained in the domain")]
    SetOutsideDomain,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A closed interval `[lo, hi]`; `lo == hi` is a single point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MapError> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(MapError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

/// A finite union of closed intervals kept in normal form: sorted, with
/// overlapping or touching intervals merged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<Interval>", try_from = "Vec<Interval>")]
pub struct IntervalSet {
    intervals: Vec<Interval>,
}

impl TryFrom<Vec<Interval>> for IntervalSet {
    type Error = MapError;

    fn try_from(v: Vec<Interval>) -> Result<Self, MapError> {
        for i in &v {
            Interval::new(i.lo, i.hi)?;
        }
        Ok(IntervalSet::from_intervals(v))
    }
}

impl From<IntervalSet> for Vec<Interval> {
    fn from(s: IntervalSet) -> Self {
        s.intervals
    }
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalizes an arbitrary list of valid intervals.
    pub fn from_intervals(mut v: Vec<Interval>) -> Self {
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut out: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match out.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => out.push(iv),
            }
        }
        Self { intervals: out }
    }

    /// Builds a set from `(lo, hi)` pairs, validating each.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, MapError> {
        let v = pairs
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_intervals(v))
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self, MapError> {
        Ok(Self {
            intervals: vec![Interval::new(lo, hi)?],
        })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(Interval::length).sum()
    }

    pub fn contains_point(&self, x: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(x))
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = self.intervals.clone();
        v.extend_from_slice(&other.intervals);
        Self::from_intervals(v)
    }

    pub fn intersection(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a, b) = (self.intervals[i], other.intervals[j]);
            if let Some(c) = a.intersect(&b) {
                v.push(c);
            }
            if a.hi < b.hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self::from_intervals(v)
    }

    /// Whether the two sets share no point (touching counts as sharing).
    pub fn is_disjoint(&self, other: &IntervalSet) -> bool {
        self.intersection(other).is_empty()
    }

    /// `other ⊆ self`, allowing each endpoint to miss by up to `tol`.
    pub fn contains_set(&self, other: &IntervalSet, tol: f64) -> bool {
        // Gaps narrower than the tolerance are closed first, so rounding
        // cannot split one covering interval in two.
        let mut closed: Vec<Interval> = Vec::with_capacity(self.intervals.len());
        for iv in &self.intervals {
            match closed.last_mut() {
                Some(last) if iv.lo - last.hi <= tol => last.hi = last.hi.max(iv.hi),
                _ => closed.push(*iv),
            }
        }
        other.intervals.iter().all(|o| {
            closed
                .iter()
                .any(|c| c.lo - tol <= o.lo && o.hi <= c.hi + tol)
        })
    }
}

/// Closed-form branch formulas; every kind is monotone on a suitable interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchKind {
    /// `slope * x + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `p x^2 + q x + r`
    Quadratic { p: f64, q: f64, r: f64 },
    /// `c * min(x, 1 - x)`
    TentScaled { c: f64 },
}

impl BranchKind {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            BranchKind::Affine { slope, intercept } => slope * x + intercept,
            BranchKind::Quadratic { p, q, r } => (p * x + q) * x + r,
            BranchKind::TentScaled { c } => c * x.min(1.0 - x),
        }
    }

    /// Affine form `(slope, intercept)` of this branch on `iv`, if it has one.
    pub fn affine_on(&self, iv: &Interval) -> Option<(f64, f64)> {
        match *self {
            BranchKind::Affine { slope, intercept } => Some((slope, intercept)),
            BranchKind::TentScaled { c } => {
                if iv.hi <= 0.5 {
                    Some((c, 0.0))
                } else if iv.lo >= 0.5 {
                    Some((-c, c))
                } else {
                    None
                }
            }
            BranchKind::Quadratic { p: 0.0, q, r } => Some((q, r)),
            BranchKind::Quadratic { .. } => None,
        }
    }

    fn is_strictly_monotone_on(&self, iv: &Interval) -> bool {
        match *self {
            BranchKind::Affine { slope, .. } => slope != 0.0 && slope.is_finite(),
            BranchKind::Quadratic { p, q, .. } => {
                if p == 0.0 {
                    q != 0.0
                } else {
                    let vertex = -q / (2.0 * p);
                    !(iv.lo < vertex && vertex < iv.hi)
                }
            }
            BranchKind::TentScaled { c } => c != 0.0 && !(iv.lo < 0.5 && 0.5 < iv.hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    #[serde(flatten)]
    pub kind: BranchKind,
}

impl Branch {
    pub fn interval(&self) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawMap {
    domain: [f64; 2],
    branches: Vec<Branch>,
}

/// A piecewise-monotone map of a closed interval.
///
/// The image of the map may leave the domain; such maps describe open
/// systems (see [`crate::open_systems`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMap")]
pub struct PiecewiseMap {
    domain: Interval,
    branches: Vec<Branch>,
}

impl TryFrom<RawMap> for PiecewiseMap {
    type Error = MapError;

    fn try_from(raw: RawMap) -> Result<Self, MapError> {
        PiecewiseMap::new(Interval::new(raw.domain[0], raw.domain[1])?, raw.branches)
    }
}

impl PiecewiseMap {
    pub fn new(domain: Interval, mut branches: Vec<Branch>) -> Result<Self, MapError> {
        if branches.is_empty() {
            return Err(MapError::NoBranches);
        }
        branches.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut cursor = domain.lo;
        for (index, b) in branches.iter().enumerate() {
            let iv = Interval::new(b.lo, b.hi)?;
            if (iv.lo - cursor).abs() > PARTITION_TOLERANCE || iv.length() <= 0.0 {
                return Err(MapError::BadPartition { at: cursor });
            }
            if !b.kind.is_strictly_monotone_on(&iv) {
                return Err(MapError::NotMonotone {
                    index,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
            if !b.kind.eval(iv.lo).is_finite() || !b.kind.eval(iv.hi).is_finite() {
                return Err(MapError::NotEvaluable { index });
            }
            cursor = iv.hi;
        }
        if (cursor - domain.hi).abs() > PARTITION_TOLERANCE {
            return Err(MapError::BadPartition { at: cursor });
        }
        Ok(Self { domain, branches })
    }

    /// `c * min(x, 1 - x)` on `[0, 1]`, split at the peak.
    pub fn tent(c: f64) -> Result<Self, MapError> {
        if !(c > 0.0) {
            return Err(MapError::InvalidParameter(format!("tent height c = {c}")));
        }
        let kind = BranchKind::TentScaled { c };
        Self::new(
            Interval { lo: 0.0, hi: 1.0 },
            vec![
                Branch {
                    lo: 0.0,
                    hi: 0.5,
                    kind,
                },
                Branch {
                    lo: 0.5,
                    hi: 1.0,
                    kind,
                },
            ],
        )
    }

    /// `2x mod 1` on `[0, 1]`.
    pub fn doubling() -> Self {
        Self::new(
            Interval { lo: 0.0, hi: 1.0 },
            vec![
                Branch {
                    lo: 0.0,
                    hi: 0.5,
                    kind: BranchKind::Affine {
                        slope: 2.0,
                        intercept: 0.0,
                    },
                },
                Branch {
                    lo: 0.5,
                    hi: 1.0,
                    kind: BranchKind::Affine {
                        slope: 2.0,
                        intercept: -1.0,
                    },
                },
            ],
        )
        .expect("doubling map is well formed")
    }

    pub fn identity() -> Self {
        Self::new(
            Interval { lo: 0.0, hi: 1.0 },
            vec![Branch {
                lo: 0.0,
                hi: 1.0,
                kind: BranchKind::Affine {
                    slope: 1.0,
                    intercept: 0.0,
                },
            }],
        )
        .expect("identity map is well formed")
    }

    /// The full logistic map `4x(1 - x)` as two quadratic branches.
    pub fn logistic() -> Self {
        let kind = BranchKind::Quadratic {
            p: -4.0,
            q: 4.0,
            r: 0.0,
        };
        Self::new(
            Interval { lo: 0.0, hi: 1.0 },
            vec![
                Branch {
                    lo: 0.0,
                    hi: 0.5,
                    kind,
                },
                Branch {
                    lo: 0.5,
                    hi: 1.0,
                    kind,
                },
            ],
        )
        .expect("logistic map is well formed")
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Value of the map at `x`; the left branch wins at shared endpoints.
    pub fn evaluate(&self, x: f64) -> Result<f64, MapError> {
        self.branch_at(x)
            .map(|b| b.kind.eval(x))
            .ok_or(MapError::OutsideDomain {
                x,
                lo: self.domain.lo,
                hi: self.domain.hi,
            })
    }

    fn branch_at(&self, x: f64) -> Option<&Branch> {
        if !self.domain.contains(x) {
            return None;
        }
        // Branches are sorted, so the first match is the leftmost one.
        let idx = self.branches.partition_point(|b| b.hi < x);
        self.branches.get(idx).filter(|b| b.lo <= x && x <= b.hi)
    }

    /// Whether every branch maps into the domain (up to `tol`).
    pub fn is_closed(&self, tol: f64) -> bool {
        self.branches.iter().all(|b| {
            let (a, c) = (b.kind.eval(b.lo), b.kind.eval(b.hi));
            a.min(c) >= self.domain.lo - tol && a.max(c) <= self.domain.hi + tol
        })
    }

    /// Integer affine coefficients for every branch, when they exist.
    fn integer_affine_form(&self) -> Option<Vec<(i128, i128)>> {
        const LIMIT: f64 = (1u64 << 40) as f64;
        self.branches
            .iter()
            .map(|b| {
                let (s, c) = b.kind.affine_on(&b.interval())?;
                let ok = |v: f64| v.fract() == 0.0 && v.abs() < LIMIT;
                (ok(s) && ok(c)).then_some((s as i128, c as i128))
            })
            .collect()
    }
}

/// Exact image of `s` under the map, computed branchwise.
///
/// The result may extend outside the domain for open maps.
pub fn image(map: &PiecewiseMap, s: &IntervalSet) -> IntervalSet {
    let mut pieces = Vec::new();
    for iv in s.intervals() {
        for b in map.branches() {
            if let Some(part) = iv.intersect(&b.interval()) {
                let (u, v) = (b.kind.eval(part.lo), b.kind.eval(part.hi));
                pieces.push(Interval {
                    lo: u.min(v),
                    hi: u.max(v),
                });
            }
        }
    }
    IntervalSet::from_intervals(pieces)
}

/// `S^k(s)` for `k = 1..=steps`; points mapped outside the domain are
/// dropped before the next step.
pub fn iterated_images(map: &PiecewiseMap, s: &IntervalSet, steps: usize) -> Vec<IntervalSet> {
    let domain = IntervalSet {
        intervals: vec![map.domain()],
    };
    let mut out = Vec::with_capacity(steps);
    let mut current = s.clone();
    for _ in 0..steps {
        current = image(map, &current.intersection(&domain));
        out.push(current.clone());
    }
    out
}

/// Witness for a covering check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub holds: bool,
    pub t0: usize,
    /// `S^k(A)` for `k = 1..=t0`.
    pub images_a: Vec<IntervalSet>,
    /// `S^k(B)` for `k = 1..=t0`.
    pub images_b: Vec<IntervalSet>,
    pub target: IntervalSet,
    pub common_image: IntervalSet,
}

/// Decides `A ∪ B ⊆ S^t0(A) ∩ S^t0(B)` for disjoint nonempty compact `A`, `B`.
pub fn check_covering(
    map: &PiecewiseMap,
    a: &IntervalSet,
    b: &IntervalSet,
    t0: usize,
) -> Result<CoveringReport, MapError> {
    if t0 == 0 {
        return Err(MapError::InvalidParameter("t0 must be positive".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(MapError::EmptySet);
    }
    if !a.is_disjoint(b) {
        return Err(MapError::Overlap);
    }
    let domain = IntervalSet {
        intervals: vec![map.domain()],
    };
    if !domain.contains_set(a, 0.0) || !domain.contains_set(b, 0.0) {
        return Err(MapError::SetOutsideDomain);
    }
    let images_a = iterated_images(map, a, t0);
    let images_b = iterated_images(map, b, t0);
    let (last_a, last_b) = (&images_a[t0 - 1], &images_b[t0 - 1]);
    let target = a.union(b);
    let holds = last_a.contains_set(&target, COVERING_TOLERANCE)
        && last_b.contains_set(&target, COVERING_TOLERANCE);
    Ok(CoveringReport {
        holds,
        t0,
        common_image: last_a.intersection(last_b),
        images_a,
        images_b,
        target,
    })
}

/// How the points of an [`Orbit`] were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitArithmetic {
    /// IEEE double iteration of [`PiecewiseMap::evaluate`].
    Float,
    /// Exact rational iteration; used when every branch is affine with
    /// integer coefficients and the start point has a short decimal form.
    /// Plain doubles would collapse e.g. the doubling map onto 0 within
    /// about 53 steps.
    ExactRational,
}

/// A finite forward orbit `x0, S(x0), ..., S^n(x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub points: Vec<f64>,
    /// Step at which the orbit left the domain, if it did.
    pub escaped_at: Option<usize>,
    pub arithmetic: OrbitArithmetic,
}

impl Orbit {
    /// Iterates `steps` times from `x0`, stopping early on escape.
    pub fn compute(map: &PiecewiseMap, x0: f64, steps: usize) -> Result<Orbit, MapError> {
        let mut it = OrbitIter::new(map, x0)?;
        let arithmetic = it.arithmetic();
        let mut points = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            match it.next() {
                Some(x) => points.push(x),
                None => break,
            }
        }
        Ok(Orbit {
            points,
            escaped_at: it.escaped_at,
            arithmetic,
        })
    }
}

enum OrbitState {
    Float(f64),
    Exact {
        numerator: i128,
        denominator: i128,
        coefficients: Vec<(i128, i128)>,
        /// Branch endpoints as exact dyadic fractions `(m, 2^j)`.
        cuts: Vec<(i128, i128, i128, i128)>,
    },
}

/// Lazy orbit iterator; yields `x0` first and stops after an escape.
pub struct OrbitIter<'a> {
    map: &'a PiecewiseMap,
    state: Option<OrbitState>,
    index: usize,
    escaped_at: Option<usize>,
}

impl<'a> OrbitIter<'a> {
    pub fn new(map: &'a PiecewiseMap, x0: f64) -> Result<Self, MapError> {
        map.evaluate(x0)?;
        let state = exact_state(map, x0).unwrap_or(OrbitState::Float(x0));
        Ok(Self {
            map,
            state: Some(state),
            index: 0,
            escaped_at: None,
        })
    }

    /// Float-only iteration, regardless of the map's coefficients.
    pub fn new_float(map: &'a PiecewiseMap, x0: f64) -> Result<Self, MapError> {
        map.evaluate(x0)?;
        Ok(Self {
            map,
            state: Some(OrbitState::Float(x0)),
            index: 0,
            escaped_at: None,
        })
    }

    pub fn arithmetic(&self) -> OrbitArithmetic {
        match self.state {
            Some(OrbitState::Exact { .. }) => OrbitArithmetic::ExactRational,
            _ => OrbitArithmetic::Float,
        }
    }

    pub fn escaped_at(&self) -> Option<usize> {
        self.escaped_at
    }
}

impl Iterator for OrbitIter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let state = self.state.as_mut()?;
        let current = match state {
            OrbitState::Float(x) => *x,
            OrbitState::Exact {
                numerator,
                denominator,
                ..
            } => *numerator as f64 / *denominator as f64,
        };
        // Advance; on escape (or exact overflow) record and stop after
        // yielding the current point.
        let advanced = match state {
            OrbitState::Float(x) => self.map.evaluate(*x).ok().and_then(|y| {
                self.map.domain().contains(y).then(|| {
                    *x = y;
                })
            }),
            OrbitState::Exact {
                numerator,
                denominator,
                coefficients,
                cuts,
            } => exact_step(*numerator, *denominator, coefficients, cuts).and_then(|n| {
                let lo_ok = cuts.first().map(|c| le_frac(c.0, c.1, n, *denominator));
                let hi_ok = cuts.last().map(|c| le_frac(n, *denominator, c.2, c.3));
                match (lo_ok.flatten(), hi_ok.flatten()) {
                    (Some(true), Some(true)) => {
                        *numerator = n;
                        Some(())
                    }
                    _ => None,
                }
            }),
        };
        if advanced.is_none() {
            self.state = None;
            self.escaped_at = Some(self.index + 1);
        }
        self.index += 1;
        Some(current)
    }
}

/// `a/b <= c/d` for positive denominators, `None` on overflow.
fn le_frac(a: i128, b: i128, c: i128, d: i128) -> Option<bool> {
    Some(a.checked_mul(d)? <= c.checked_mul(b)?)
}

fn exact_step(
    n: i128,
    q: i128,
    coefficients: &[(i128, i128)],
    cuts: &[(i128, i128, i128, i128)],
) -> Option<i128> {
    // Leftmost branch whose closed interval contains n/q.
    for (i, &(lm, ld, hm, hd)) in cuts.iter().enumerate() {
        if le_frac(lm, ld, n, q)? && le_frac(n, q, hm, hd)? {
            let (s, c) = coefficients[i];
            return s.checked_mul(n)?.checked_add(c.checked_mul(q)?);
        }
    }
    None
}

/// Exact dyadic form `(m, 2^j)` of a double, if `j` is small enough.
fn dyadic(x: f64) -> Option<(i128, i128)> {
    if !x.is_finite() {
        return None;
    }
    let mut m = x;
    let mut d: i128 = 1;
    for _ in 0..=60 {
        if m.fract() == 0.0 {
            return Some((m as i128, d));
        }
        m *= 2.0;
        d *= 2;
    }
    None
}

/// Shortest round-trip decimal expansion of `x` as `numerator / 10^k`.
fn decimal_fraction(x: f64) -> Option<(i128, i128)> {
    let text = format!("{x}");
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.len() + frac_part.len() > 30 || frac_part.len() > 18 {
        return None;
    }
    let mut numerator: i128 = format!("{int_part}{frac_part}").parse().ok()?;
    if neg {
        numerator = -numerator;
    }
    let denominator = 10i128.checked_pow(frac_part.len() as u32)?;
    let g = gcd(numerator.abs(), denominator);
    Some((numerator / g, denominator / g))
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

fn exact_state(map: &PiecewiseMap, x0: f64) -> Option<OrbitState> {
    let coefficients = map.integer_affine_form()?;
    let cuts = map
        .branches()
        .iter()
        .map(|b| {
            let (lm, ld) = dyadic(b.lo)?;
            let (hm, hd) = dyadic(b.hi)?;
            Some((lm, ld, hm, hd))
        })
        .collect::<Option<Vec<_>>>()?;
    let (numerator, denominator) = decimal_fraction(x0)?;
    // Keep headroom for `slope * n + intercept * q` and the dyadic compares.
    if denominator > 1i128 << 62 {
        return None;
    }
    Some(OrbitState::Exact {
        numerator,
        denominator,
        coefficients,
        cuts,
    })
}

/// Result of a Birkhoff (time-average) computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffAverage {
    pub value: f64,
    /// Number of orbit points averaged (`n` unless the orbit escaped).
    pub terms: usize,
    pub escaped: bool,
    pub arithmetic: OrbitArithmetic,
}

/// `(1/n) Σ_{k<n} g(S^k(x0))`; returns the partial average if the orbit
/// leaves the domain first.
pub fn birkhoff_average<G: Fn(f64) -> f64>(
    map: &PiecewiseMap,
    observable: G,
    x0: f64,
    n: usize,
) -> Result<BirkhoffAverage, MapError> {
    if n == 0 {
        return Err(MapError::InvalidParameter("n must be at least 1".into()));
    }
    let mut it = OrbitIter::new(map, x0)?;
    let arithmetic = it.arithmetic();
    let mut sum = 0.0;
    let mut terms = 0usize;
    for x in it.by_ref().take(n) {
        sum += observable(x);
        terms += 1;
    }
    // The last yielded point is valid even when its successor escaped.
    let escaped = terms < n;
    Ok(BirkhoffAverage {
        value: sum / terms as f64,
        terms,
        escaped,
        arithmetic,
    })
}

/// Largest observed separation in a sensitivity experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub eta: f64,
    /// The sampled neighbour that achieved `eta`.
    pub witness: f64,
    pub step: usize,
}

/// Samples neighbours `y` of `x0` within `eps` and reports the largest
/// `|S^k(x0) - S^k(y)|` over `k <= horizon`.
pub fn sensitivity_estimate(
    map: &PiecewiseMap,
    x0: f64,
    eps: f64,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<SensitivityEstimate, MapError> {
    if !(eps > 0.0) {
        return Err(MapError::InvalidParameter(format!("eps = {eps}")));
    }
    let domain = map.domain();
    let ball = Interval {
        lo: (x0 - eps).max(domain.lo),
        hi: (x0 + eps).min(domain.hi),
    };
    if ball.lo > ball.hi {
        return Err(MapError::OutsideDomain {
            x: x0,
            lo: domain.lo,
            hi: domain.hi,
        });
    }
    let reference: Vec<f64> = OrbitIter::new_float(map, x0)?.take(horizon + 1).collect();
    let mut rng = SeededStream::new(seed, 0).rng();
    let mut best = SensitivityEstimate {
        eta: 0.0,
        witness: x0,
        step: 0,
    };
    for _ in 0..samples {
        let y0 = rng.random_range(ball.lo..=ball.hi);
        for (k, (x, y)) in reference
            .iter()
            .zip(OrbitIter::new_float(map, y0)?)
            .enumerate()
        {
            let d = (x - y).abs();
            if d > best.eta {
                best = SensitivityEstimate {
                    eta: d,
                    witness: y0,
                    step: k,
                };
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(p: &[(f64, f64)]) -> IntervalSet {
        IntervalSet::from_pairs(p).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(
            PiecewiseMap::tent(3.0).unwrap().evaluate(0.25).unwrap(),
            0.75
        );
        assert_eq!(PiecewiseMap::tent(2.0).unwrap().evaluate(0.5).unwrap(), 1.0);
        assert_eq!(PiecewiseMap::doubling().evaluate(0.3).unwrap(), 0.6);
    }

    #[test]
    fn evaluate_left_branch_wins_at_cut() {
        // Doubling map: left branch gives 1, right branch would give 0.
        assert_eq!(PiecewiseMap::doubling().evaluate(0.5).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_outside_domain() {
        assert!(matches!(
            PiecewiseMap::doubling().evaluate(1.5),
            Err(MapError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn construction_rejects_bad_maps() {
        let d = Interval::new(0.0, 1.0).unwrap();
        let aff = BranchKind::Affine {
            slope: 1.0,
            intercept: 0.0,
        };
        // gap
        assert!(PiecewiseMap::new(
            d,
            vec![
                Branch {
                    lo: 0.0,
                    hi: 0.4,
                    kind: aff
                },
                Branch {
                    lo: 0.5,
                    hi: 1.0,
                    kind: aff
                }
            ]
        )
        .is_err());
        // tent branch straddling the peak
        assert!(matches!(
            PiecewiseMap::new(
                d,
                vec![Branch {
                    lo: 0.0,
                    hi: 1.0,
                    kind: BranchKind::TentScaled { c: 2.0 }
                }]
            ),
            Err(MapError::NotMonotone { .. })
        ));
        // quadratic with vertex inside
        assert!(PiecewiseMap::new(
            d,
            vec![Branch {
                lo: 0.0,
                hi: 1.0,
                kind: BranchKind::Quadratic {
                    p: -4.0,
                    q: 4.0,
                    r: 0.0
                }
            }]
        )
        .is_err());
        assert!(PiecewiseMap::new(
            d,
            vec![Branch {
                lo: 0.0,
                hi: 1.0,
                kind: BranchKind::Affine {
                    slope: 0.0,
                    intercept: 0.5
                }
            }]
        )
        .is_err());
    }

    #[test]
    fn interval_set_normalizes() {
        let s = set(&[(0.5, 0.7), (0.0, 0.2), (0.2, 0.3), (0.6, 0.9)]);
        assert_eq!(s.intervals(), set(&[(0.0, 0.3), (0.5, 0.9)]).intervals());
    }

    #[test]
    fn image_examples() {
        let s = set(&[(0.0, 0.4)]);
        assert_eq!(image(&PiecewiseMap::doubling(), &s), set(&[(0.0, 0.8)]));
        let tent = PiecewiseMap::tent(2.0).unwrap();
        assert_eq!(
            image(&tent, &set(&[(0.0, 0.4), (0.6, 1.0)])),
            set(&[(0.0, 0.8)])
        );
        let any = set(&[(0.1, 0.2), (0.5, 0.55)]);
        assert_eq!(image(&PiecewiseMap::identity(), &any), any);
    }

    #[test]
    fn covering_examples() {
        let tent = PiecewiseMap::tent(2.0).unwrap();
        let a = set(&[(0.0, 0.4)]);
        let b = set(&[(0.6, 1.0)]);
        let r = check_covering(&tent, &a, &b, 2).unwrap();
        assert!(r.holds);
        assert_eq!(r.images_a[0], set(&[(0.0, 0.8)]));
        assert_eq!(r.images_a[1], set(&[(0.0, 1.0)]));
        assert_eq!(r.images_b[0], set(&[(0.0, 0.8)]));
        assert_eq!(r.images_b[1], set(&[(0.0, 1.0)]));
        assert!(!check_covering(&tent, &a, &b, 1).unwrap().holds);
        assert!(
            !check_covering(&PiecewiseMap::identity(), &a, &b, 1)
                .unwrap()
                .holds
        );
    }

    #[test]
    fn covering_preconditions() {
        let tent = PiecewiseMap::tent(2.0).unwrap();
        let a = set(&[(0.0, 0.6)]);
        let b = set(&[(0.6, 1.0)]);
        assert_eq!(check_covering(&tent, &a, &b, 1), Err(MapError::Overlap));
        assert_eq!(
            check_covering(&tent, &IntervalSet::empty(), &b, 1),
            Err(MapError::EmptySet)
        );
    }

    #[test]
    fn doubling_birkhoff_average_of_x() {
        let r = birkhoff_average(&PiecewiseMap::doubling(), |x| x, 0.1234567, 1_000_000).unwrap();
        assert_eq!(r.arithmetic, OrbitArithmetic::ExactRational);
        assert!(!r.escaped);
        assert!((r.value - 0.5).abs() < 3e-3, "{}", r.value);
    }

    #[test]
    fn birkhoff_constant_and_fixed_point() {
        let tent = PiecewiseMap::tent(2.0).unwrap();
        let r = birkhoff_average(&tent, |_| 1.0, 0.3141, 12_345).unwrap();
        assert_eq!(r.value, 1.0);
        let g = |x: f64| (3.0 * x).sin();
        // 3/4 is a fixed point of 4x(1 - x), exactly representable.
        let r = birkhoff_average(&PiecewiseMap::logistic(), g, 0.75, 100).unwrap();
        assert!((r.value - g(0.75)).abs() < 1e-14);
        let r = birkhoff_average(&PiecewiseMap::doubling(), g, 0.0, 100).unwrap();
        assert_eq!(r.value, g(0.0));
    }

    #[test]
    fn birkhoff_partial_on_escape() {
        // Middle third escapes the c = 3 tent after one step.
        let tent = PiecewiseMap::tent(3.0).unwrap();
        let r = birkhoff_average(&tent, |x| x, 0.5, 10).unwrap();
        assert!(r.escaped);
        assert_eq!(r.terms, 1);
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn exact_orbit_matches_float_early_on() {
        let o = Orbit::compute(&PiecewiseMap::doubling(), 0.3, 20).unwrap();
        assert_eq!(o.arithmetic, OrbitArithmetic::ExactRational);
        // 0.3 -> 0.6 -> 0.2 -> 0.4 -> 0.8 -> 0.6 ...
        let expect = [0.3, 0.6, 0.2, 0.4, 0.8, 0.6];
        for (p, e) in o.points.iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
        assert_eq!(o.points.len(), 21);
        let quad = Orbit::compute(&PiecewiseMap::logistic(), 0.3, 5).unwrap();
        assert_eq!(quad.arithmetic, OrbitArithmetic::Float);
        for w in quad.points.windows(2) {
            assert_eq!(w[1], PiecewiseMap::logistic().evaluate(w[0]).unwrap());
        }
    }

    #[test]
    fn sensitivity_examples() {
        let d = sensitivity_estimate(&PiecewiseMap::doubling(), 0.3, 1e-6, 40, 100, 1).unwrap();
        assert!(d.eta >= 0.25, "{d:?}");
        let t =
            sensitivity_estimate(&PiecewiseMap::tent(2.0).unwrap(), 0.2, 1e-4, 30, 100, 1).unwrap();
        assert!(t.eta >= 0.25, "{t:?}");
        let i = sensitivity_estimate(&PiecewiseMap::identity(), 0.4, 1e-3, 30, 100, 1).unwrap();
        assert!(i.eta <= 1e-3);
    }

    #[test]
    fn sensitivity_oracle_explicit_pair() {
        // Explicit pair iteration: separation of 0.3 and 0.3 + 1e-6 under
        // doubling exceeds 0.25 by step 20.
        let (mut x, mut y) = (0.3f64, 0.3f64 + 1e-6);
        let mut best: f64 = 0.0;
        for _ in 0..40 {
            x = (2.0 * x).fract();
            y = (2.0 * y).fract();
            best = best.max((x - y).abs());
        }
        assert!(best >= 0.25);
    }

    #[test]
    fn map_deserializes_and_validates() {
        let json = r#"{"domain":[0,1],"branches":[
            {"lo":0,"hi":0.5,"kind":"affine","slope":2,"intercept":0},
            {"lo":0.5,"hi":1,"kind":"affine","slope":2,"intercept":-1}]}"#;
        let m: PiecewiseMap = serde_json::from_str(json).unwrap();
        assert_eq!(m, PiecewiseMap::doubling());
        let bad = r#"{"domain":[0,1],"branches":[{"lo":0,"hi":0.5,"kind":"tent_scaled","c":2}]}"#;
        assert!(serde_json::from_str::<PiecewiseMap>(bad).is_err());
    }

    fn arb_set() -> impl Strategy<Value = IntervalSet> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..0.3), 1..5).prop_map(|v| {
            IntervalSet::from_intervals(
                v.into_iter()
                    .map(|(a, l)| Interval {
                        lo: a,
                        hi: (a + l).min(1.0),
                    })
                    .collect(),
            )
        })
    }

    fn maps() -> Vec<PiecewiseMap> {
        vec![
            PiecewiseMap::doubling(),
            PiecewiseMap::tent(2.0).unwrap(),
            PiecewiseMap::tent(3.0).unwrap(),
            PiecewiseMap::logistic(),
        ]
    }

    proptest! {
        #[test]
        fn image_is_monotone(s1 in arb_set(), s2 in arb_set()) {
            let big = s1.union(&s2);
            for m in maps() {
                prop_assert!(image(&m, &big).contains_set(&image(&m, &s1), 0.0));
            }
        }

        #[test]
        fn image_distributes_over_union(s1 in arb_set(), s2 in arb_set()) {
            for m in maps() {
                let lhs = image(&m, &s1.union(&s2));
                let rhs = image(&m, &s1).union(&image(&m, &s2));
                prop_assert!(lhs.contains_set(&rhs, 1e-15) && rhs.contains_set(&lhs, 1e-15));
            }
        }

        #[test]
        fn evaluate_matches_branch_formula(u in 0.0f64..1.0) {
            for m in maps() {
                for b in m.branches() {
                    let x = b.lo + u * (b.hi - b.lo);
                    if x > b.lo {
                        prop_assert_eq!(m.evaluate(x).unwrap(), b.kind.eval(x));
                    }
                }
            }
        }

        #[test]
        fn birkhoff_of_one_is_one(x0 in 0.0f64..1.0, n in 1usize..5000) {
            for m in maps() {
                prop_assert_eq!(birkhoff_average(&m, |_| 1.0, x0, n).unwrap().value, 1.0);
            }
        }
    }
}
