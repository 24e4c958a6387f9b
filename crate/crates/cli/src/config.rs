//! Scenario configuration files.
//!
//! A config is a TOML document with four parts:
//!
//! ```toml
//! scenario_kind = "open_escape"
//! seed = 7
//! outputs = ["escape.json", "support.csv"]   # optional, defaults per kind
//!
//! [model]          # map, PDMP or semiflow definition
//! preset = "tent"
//! c = 3.0
//!
//! [numeric]        # grid sizes, horizons, tolerances
//! n_cells = 2187
//! tol = 1e-10
//! ```
//!
//! Parsing happens in two passes over the same text: the header pass
//! fixes the scenario kind, then the whole document is deserialized into
//! the kind's typed layout with unknown keys rejected. Both passes keep
//! the TOML spans, so errors point at a line.

use std::fmt;

use ergodic_core::function_semiflows::{InvarianceConfig, LinearMaturitySemiflow, Threshold};
use ergodic_core::interval_dynamics::{Branch, Interval, IntervalSet, PiecewiseMap};
use ergodic_core::pdmp::{
    Axis, BoundaryRule, Mode, PdmpModel, PdmpState, PointJump, Window, DEFAULT_STEP,
};
use ergodic_core::transfer_operators::{DEFAULT_SAMPLES_PER_CELL, STABLE_TOLERANCE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A config that failed to parse or validate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl ConfigError {
    fn at(text: &str, key: &str, message: impl Into<String>) -> Self {
        Self {
            line: key_line(text, key),
            message: message.into(),
        }
    }

    fn from_toml(text: &str, e: toml::de::Error) -> Self {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Self {
            line,
            message: e.message().trim().to_string(),
        }
    }
}

/// Line (1-based) where `dotted` (`table.key` or a top-level `key`) is
/// assigned, falling back to the table header.
fn key_line(text: &str, dotted: &str) -> Option<usize> {
    let (table, key) = dotted.rsplit_once('.').unwrap_or(("", dotted));
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            if current == table && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CoveringCheck,
    UlamStability,
    OpenEscape,
    PdmpRun,
    PdmpFoguel,
    SemiflowInvariance,
    SemiflowMixing,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::CoveringCheck,
        ScenarioKind::UlamStability,
        ScenarioKind::OpenEscape,
        ScenarioKind::PdmpRun,
        ScenarioKind::PdmpFoguel,
        ScenarioKind::SemiflowInvariance,
        ScenarioKind::SemiflowMixing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CoveringCheck => "covering_check",
            ScenarioKind::UlamStability => "ulam_stability",
            ScenarioKind::OpenEscape => "open_escape",
            ScenarioKind::PdmpRun => "pdmp_run",
            ScenarioKind::PdmpFoguel => "pdmp_foguel",
            ScenarioKind::SemiflowInvariance => "semiflow_invariance",
            ScenarioKind::SemiflowMixing => "semiflow_mixing",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioKind::CoveringCheck => {
                "exact interval-arithmetic covering test for a piecewise map"
            }
            ScenarioKind::UlamStability => {
                "Ulam invariant density, convergence traces and lower-function test"
            }
            ScenarioKind::OpenEscape => {
                "escape factor, conditional invariant density and limit measure of an open map"
            }
            ScenarioKind::PdmpRun => "single path and ensemble densities of a switching process",
            ScenarioKind::PdmpFoguel => "stable/sweeping diagnostic with window-mass curves",
            ScenarioKind::SemiflowInvariance => "KS invariance test of the maturity semiflow",
            ScenarioKind::SemiflowMixing => {
                "mixing gaps of the maturity semiflow along a time grid"
            }
        }
    }

    /// Every artifact the scenario can write.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::CoveringCheck => &["covering.json"],
            ScenarioKind::UlamStability => &[
                "density.csv",
                "stability.json",
                "diagnostics.csv",
                "lower_function.csv",
                "operator.csv",
            ],
            ScenarioKind::OpenEscape => &["escape.json", "escape.csv", "support.csv"],
            ScenarioKind::PdmpRun => &["trajectory.csv", "densities.csv", "stationary.csv"],
            ScenarioKind::PdmpFoguel => &["foguel.json", "mass_curves.csv"],
            ScenarioKind::SemiflowInvariance => &["invariance.json"],
            ScenarioKind::SemiflowMixing => &["mixing.json", "mixing.csv"],
        }
    }

    /// Artifacts written when the config has no `outputs` list. The dense
    /// Ulam matrix is only written on request.
    pub fn default_artifacts(self) -> Vec<&'static str> {
        self.artifacts()
            .iter()
            .copied()
            .filter(|a| *a != "operator.csv")
            .collect()
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Deserialize)]
struct Header {
    scenario_kind: ScenarioKind,
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document<M, N> {
    #[serde(rename = "scenario_kind")]
    _scenario_kind: ScenarioKind,
    #[serde(rename = "seed")]
    _seed: u64,
    #[serde(default)]
    outputs: Option<Vec<String>>,
    model: M,
    numeric: N,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MapPreset {
    Tent,
    Doubling,
    Identity,
    Logistic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapSpec {
    preset: Option<MapPreset>,
    c: Option<f64>,
    domain: Option<[f64; 2]>,
    branches: Option<Vec<Branch>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PdmpPreset {
    TwoMode,
    Drift,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PdmpSpec {
    preset: Option<PdmpPreset>,
    a: Option<f64>,
    b: Option<f64>,
    domain: Option<Vec<Axis>>,
    modes: Option<Vec<Mode>>,
    q_max: Option<f64>,
    switch: Option<Vec<Vec<f64>>>,
    point_jump: Option<PointJump>,
    boundary: Option<BoundaryRule>,
    step: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvarianceModel {
    lambda: f64,
    #[serde(default)]
    corrupt_prefactor: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixingModel {
    lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringNumeric {
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub t0: usize,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_CELL
}
fn default_horizon() -> usize {
    50
}
fn default_test_densities() -> usize {
    8
}
fn default_lower_level() -> f64 {
    0.5
}
fn default_lower_tol() -> f64 {
    STABLE_TOLERANCE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlamNumeric {
    pub n_cells: usize,
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_test_densities")]
    pub test_densities: usize,
    /// Height of the constant candidate lower function.
    #[serde(default = "default_lower_level")]
    pub lower_level: f64,
    #[serde(default = "default_lower_tol")]
    pub lower_tol: f64,
}

fn default_open_samples() -> usize {
    10
}
fn default_support_threshold() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeNumeric {
    pub n_cells: usize,
    #[serde(default = "default_open_samples")]
    pub samples_per_cell: usize,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_support_threshold")]
    pub support_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdmpRunNumeric {
    pub initial_x: Vec<f64>,
    #[serde(default)]
    pub initial_mode: usize,
    /// Length of the recorded single path.
    pub path_horizon: f64,
    pub n_particles: usize,
    /// Times at which the ensemble histogram is recorded.
    pub times: Vec<f64>,
    pub window: Window,
    #[serde(default)]
    pub burn_in: Option<f64>,
    /// Averaging time of the long-run occupation estimate.
    #[serde(default)]
    pub stationary_horizon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoguelNumeric {
    pub window: [f64; 2],
    pub horizons: Vec<f64>,
    pub n_particles: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceNumeric {
    pub t: f64,
    pub n_samples: usize,
    pub probes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingNumeric {
    pub a: Vec<Threshold>,
    pub b: Vec<Threshold>,
    pub t_grid: Vec<f64>,
    pub n_samples: usize,
}

/// Validated, fully-built scenario.
#[derive(Debug, Clone)]
pub enum Scenario {
    CoveringCheck {
        map: PiecewiseMap,
        a: IntervalSet,
        b: IntervalSet,
        t0: usize,
    },
    UlamStability {
        map: PiecewiseMap,
        numeric: UlamNumeric,
    },
    OpenEscape {
        map: PiecewiseMap,
        numeric: EscapeNumeric,
    },
    PdmpRun {
        model: PdmpModel,
        initial: PdmpState,
        numeric: PdmpRunNumeric,
    },
    PdmpFoguel {
        model: PdmpModel,
        numeric: FoguelNumeric,
    },
    SemiflowInvariance(InvarianceConfig),
    SemiflowMixing {
        lambda: f64,
        numeric: MixingNumeric,
    },
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub scenario: Scenario,
    /// Hex SHA-256 of the config text.
    pub config_hash: String,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let header: Header = toml::from_str(text).map_err(|e| ConfigError::from_toml(text, e))?;
        let kind = header.scenario_kind;
        let (outputs, scenario) = match kind {
            ScenarioKind::CoveringCheck => {
                let d: Document<MapSpec, CoveringNumeric> = document(text)?;
                let map = build_map(text, d.model)?;
                let set = |key: &str, pairs: &[[f64; 2]]| {
                    let pairs: Vec<(f64, f64)> = pairs.iter().map(|p| (p[0], p[1])).collect();
                    IntervalSet::from_pairs(&pairs)
                        .map_err(|e| ConfigError::at(text, key, format!("`{key}`: {e}")))
                };
                let a = set("numeric.a", &d.numeric.a)?;
                let b = set("numeric.b", &d.numeric.b)?;
                if d.numeric.t0 == 0 {
                    return Err(ConfigError::at(
                        text,
                        "numeric.t0",
                        "`numeric.t0` must be positive",
                    ));
                }
                (
                    d.outputs,
                    Scenario::CoveringCheck {
                        map,
                        a,
                        b,
                        t0: d.numeric.t0,
                    },
                )
            }
            ScenarioKind::UlamStability => {
                let d: Document<MapSpec, UlamNumeric> = document(text)?;
                let map = build_map(text, d.model)?;
                let n = &d.numeric;
                at_least(text, "numeric.n_cells", n.n_cells, 2)?;
                at_least(text, "numeric.samples_per_cell", n.samples_per_cell, 1)?;
                at_least(text, "numeric.max_iters", n.max_iters, 1)?;
                at_least(text, "numeric.test_densities", n.test_densities, 1)?;
                positive(text, "numeric.tol", n.tol)?;
                positive(text, "numeric.lower_level", n.lower_level)?;
                positive(text, "numeric.lower_tol", n.lower_tol)?;
                (
                    d.outputs,
                    Scenario::UlamStability {
                        map,
                        numeric: d.numeric,
                    },
                )
            }
            ScenarioKind::OpenEscape => {
                let d: Document<MapSpec, EscapeNumeric> = document(text)?;
                let map = build_map(text, d.model)?;
                let n = &d.numeric;
                at_least(text, "numeric.n_cells", n.n_cells, 2)?;
                at_least(text, "numeric.samples_per_cell", n.samples_per_cell, 1)?;
                at_least(text, "numeric.max_iters", n.max_iters, 1)?;
                positive(text, "numeric.tol", n.tol)?;
                positive(text, "numeric.support_threshold", n.support_threshold)?;
                (
                    d.outputs,
                    Scenario::OpenEscape {
                        map,
                        numeric: d.numeric,
                    },
                )
            }
            ScenarioKind::PdmpRun => {
                let d: Document<PdmpSpec, PdmpRunNumeric> = document(text)?;
                let model = build_pdmp(text, d.model)?;
                let n = &d.numeric;
                positive(text, "numeric.path_horizon", n.path_horizon)?;
                at_least(text, "numeric.n_particles", n.n_particles, 1)?;
                if n.times.is_empty() || n.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                    return Err(ConfigError::at(
                        text,
                        "numeric.times",
                        "`numeric.times` must be a nonempty list of nonnegative times",
                    ));
                }
                Window::new(n.window.lo, n.window.hi, n.window.bins).map_err(|e| {
                    ConfigError::at(text, "numeric.window", format!("`numeric.window`: {e}"))
                })?;
                if let Some(b) = n.burn_in {
                    if !(b >= 0.0 && b.is_finite()) {
                        return Err(ConfigError::at(
                            text,
                            "numeric.burn_in",
                            "`numeric.burn_in` must be nonnegative",
                        ));
                    }
                }
                if let Some(h) = n.stationary_horizon {
                    positive(text, "numeric.stationary_horizon", h)?;
                }
                let initial = PdmpState::new(n.initial_x.clone(), n.initial_mode);
                if n.initial_x.len() != model.dim() || !model.contains(&n.initial_x) {
                    return Err(ConfigError::at(
                        text,
                        "numeric.initial_x",
                        "`numeric.initial_x` must be a point of the model domain",
                    ));
                }
                if n.initial_mode >= model.modes.len() {
                    return Err(ConfigError::at(
                        text,
                        "numeric.initial_mode",
                        format!("`numeric.initial_mode` must be below {}", model.modes.len()),
                    ));
                }
                (
                    d.outputs,
                    Scenario::PdmpRun {
                        model,
                        initial,
                        numeric: d.numeric,
                    },
                )
            }
            ScenarioKind::PdmpFoguel => {
                let d: Document<PdmpSpec, FoguelNumeric> = document(text)?;
                let model = build_pdmp(text, d.model)?;
                let n = &d.numeric;
                at_least(text, "numeric.n_particles", n.n_particles, 1)?;
                if !(n.window[1] > n.window[0]) {
                    return Err(ConfigError::at(
                        text,
                        "numeric.window",
                        "`numeric.window` must satisfy lo < hi",
                    ));
                }
                if n.horizons.is_empty()
                    || n.horizons.windows(2).any(|w| !(w[1] > w[0]))
                    || !(n.horizons[0] >= 0.0)
                {
                    return Err(ConfigError::at(
                        text,
                        "numeric.horizons",
                        "`numeric.horizons` must be increasing and nonnegative",
                    ));
                }
                (
                    d.outputs,
                    Scenario::PdmpFoguel {
                        model,
                        numeric: d.numeric,
                    },
                )
            }
            ScenarioKind::SemiflowInvariance => {
                let d: Document<InvarianceModel, InvarianceNumeric> = document(text)?;
                LinearMaturitySemiflow::new(d.model.lambda).map_err(|e| {
                    ConfigError::at(text, "model.lambda", format!("`model.lambda`: {e}"))
                })?;
                let n = &d.numeric;
                at_least(text, "numeric.n_samples", n.n_samples, 2)?;
                if !(n.t >= 0.0 && n.t.is_finite()) {
                    return Err(ConfigError::at(
                        text,
                        "numeric.t",
                        "`numeric.t` must be nonnegative",
                    ));
                }
                if n.probes.is_empty() || n.probes.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
                    return Err(ConfigError::at(
                        text,
                        "numeric.probes",
                        "`numeric.probes` must lie in (0, 1]",
                    ));
                }
                let cfg = InvarianceConfig {
                    lambda: d.model.lambda,
                    t: n.t,
                    n_samples: n.n_samples,
                    probes: n.probes.clone(),
                    corrupt_prefactor: d.model.corrupt_prefactor,
                };
                (d.outputs, Scenario::SemiflowInvariance(cfg))
            }
            ScenarioKind::SemiflowMixing => {
                let d: Document<MixingModel, MixingNumeric> = document(text)?;
                LinearMaturitySemiflow::new(d.model.lambda).map_err(|e| {
                    ConfigError::at(text, "model.lambda", format!("`model.lambda`: {e}"))
                })?;
                let n = &d.numeric;
                at_least(text, "numeric.n_samples", n.n_samples, 2)?;
                for (key, event) in [("numeric.a", &n.a), ("numeric.b", &n.b)] {
                    if event.is_empty() || event.iter().any(|c| !(c.x > 0.0 && c.x <= 1.0)) {
                        return Err(ConfigError::at(
                            text,
                            key,
                            format!("`{key}` needs conditions at points of (0, 1]"),
                        ));
                    }
                }
                if n.t_grid.is_empty() || n.t_grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                    return Err(ConfigError::at(
                        text,
                        "numeric.t_grid",
                        "`numeric.t_grid` must be a nonempty list of nonnegative times",
                    ));
                }
                (
                    d.outputs,
                    Scenario::SemiflowMixing {
                        lambda: d.model.lambda,
                        numeric: d.numeric,
                    },
                )
            }
        };
        let outputs = match outputs {
            None => kind
                .default_artifacts()
                .into_iter()
                .map(String::from)
                .collect(),
            Some(list) => {
                if list.is_empty() {
                    return Err(ConfigError::at(
                        text,
                        "outputs",
                        "`outputs` must not be empty",
                    ));
                }
                for name in &list {
                    if !kind.artifacts().contains(&name.as_str()) {
                        return Err(ConfigError::at(
                            text,
                            "outputs",
                            format!(
                                "unknown artifact `{name}` for {kind}; available: {}",
                                kind.artifacts().join(", ")
                            ),
                        ));
                    }
                }
                if let Scenario::PdmpRun { numeric, .. } = &scenario {
                    if list.iter().any(|n| n == "stationary.csv")
                        && numeric.stationary_horizon.is_none()
                    {
                        return Err(ConfigError::at(
                            text,
                            "outputs",
                            "`stationary.csv` requires `numeric.stationary_horizon`",
                        ));
                    }
                }
                list
            }
        };
        let outputs = match &scenario {
            Scenario::PdmpRun { numeric, .. } if numeric.stationary_horizon.is_none() => outputs
                .into_iter()
                .filter(|n| n != "stationary.csv")
                .collect(),
            _ => outputs,
        };
        Ok(Self {
            kind,
            seed: header.seed,
            outputs,
            scenario,
            config_hash: sha256_hex(text.as_bytes()),
        })
    }

    pub fn wants(&self, artifact: &str) -> bool {
        self.outputs.iter().any(|o| o == artifact)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn document<M: DeserializeOwned, N: DeserializeOwned>(
    text: &str,
) -> Result<Document<M, N>, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::from_toml(text, e))
}

fn positive(text: &str, key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::at(
            text,
            key,
            format!("`{key}` must be positive, got {v}"),
        ))
    }
}

fn at_least(text: &str, key: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::at(
            text,
            key,
            format!("`{key}` must be at least {min}, got {v}"),
        ))
    }
}

fn build_map(text: &str, spec: MapSpec) -> Result<PiecewiseMap, ConfigError> {
    let invalid = |key: &str, e: String| ConfigError::at(text, key, format!("`{key}`: {e}"));
    match (spec.preset, spec.branches) {
        (Some(_), Some(_)) => Err(ConfigError::at(
            text,
            "model.preset",
            "`model.preset` and `model.branches` are mutually exclusive",
        )),
        (None, None) => Err(ConfigError::at(
            text,
            "model",
            "missing key `model.preset` (or `model.branches` with `model.domain`)",
        )),
        (Some(preset), None) => {
            if spec.domain.is_some() {
                return Err(ConfigError::at(
                    text,
                    "model.domain",
                    "`model.domain` is fixed by the preset",
                ));
            }
            if spec.c.is_some() && !matches!(preset, MapPreset::Tent) {
                return Err(ConfigError::at(
                    text,
                    "model.c",
                    "`model.c` only applies to the tent preset",
                ));
            }
            match preset {
                MapPreset::Tent => {
                    let c = spec.c.ok_or_else(|| {
                        ConfigError::at(text, "model", "missing key `model.c` for the tent preset")
                    })?;
                    PiecewiseMap::tent(c).map_err(|e| invalid("model.c", e.to_string()))
                }
                MapPreset::Doubling => Ok(PiecewiseMap::doubling()),
                MapPreset::Identity => Ok(PiecewiseMap::identity()),
                MapPreset::Logistic => Ok(PiecewiseMap::logistic()),
            }
        }
        (None, Some(branches)) => {
            if spec.c.is_some() {
                return Err(ConfigError::at(
                    text,
                    "model.c",
                    "`model.c` only applies to the tent preset",
                ));
            }
            let d = spec
                .domain
                .ok_or_else(|| ConfigError::at(text, "model", "missing key `model.domain`"))?;
            let domain =
                Interval::new(d[0], d[1]).map_err(|e| invalid("model.domain", e.to_string()))?;
            PiecewiseMap::new(domain, branches)
                .map_err(|e| invalid("model.branches", e.to_string()))
        }
    }
}

fn build_pdmp(text: &str, spec: PdmpSpec) -> Result<PdmpModel, ConfigError> {
    let model = match spec.preset {
        Some(preset) => {
            let explicit = spec.domain.is_some()
                || spec.modes.is_some()
                || spec.q_max.is_some()
                || spec.switch.is_some()
                || spec.point_jump.is_some()
                || spec.boundary.is_some();
            if explicit {
                return Err(ConfigError::at(
                    text,
                    "model.preset",
                    "`model.preset` cannot be combined with an explicit model definition",
                ));
            }
            let mut m = match preset {
                PdmpPreset::TwoMode => {
                    let a = spec.a.ok_or_else(|| {
                        ConfigError::at(
                            text,
                            "model",
                            "missing key `model.a` for the two_mode preset",
                        )
                    })?;
                    let b = spec.b.ok_or_else(|| {
                        ConfigError::at(
                            text,
                            "model",
                            "missing key `model.b` for the two_mode preset",
                        )
                    })?;
                    positive(text, "model.a", a)?;
                    positive(text, "model.b", b)?;
                    PdmpModel::two_mode(a, b)
                }
                PdmpPreset::Drift => {
                    if spec.a.is_some() || spec.b.is_some() {
                        return Err(ConfigError::at(
                            text,
                            "model.preset",
                            "the drift preset takes no rates",
                        ));
                    }
                    PdmpModel::drift()
                }
            };
            if let Some(step) = spec.step {
                m.step = step;
            }
            m
        }
        None => {
            if spec.a.is_some() || spec.b.is_some() {
                return Err(ConfigError::at(
                    text,
                    "model.a",
                    "`model.a`/`model.b` only apply to the two_mode preset",
                ));
            }
            let missing =
                |key: &str| ConfigError::at(text, "model", format!("missing key `model.{key}`"));
            PdmpModel {
                domain: spec.domain.ok_or_else(|| missing("domain"))?,
                modes: spec.modes.ok_or_else(|| missing("modes"))?,
                q_max: spec.q_max.ok_or_else(|| missing("q_max"))?,
                switch: spec.switch.ok_or_else(|| missing("switch"))?,
                point_jump: spec.point_jump,
                boundary: spec.boundary,
                step: spec.step.unwrap_or(DEFAULT_STEP),
            }
        }
    };
    positive(text, "model.step", model.step)?;
    model
        .validate()
        .map_err(|e| ConfigError::at(text, "model", format!("invalid model: {e}")))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ESCAPE: &str = r#"
scenario_kind = "open_escape"
seed = 3

[model]
preset = "tent"
c = 3.0

[numeric]
n_cells = 243
tol = 1e-10
max_iters = 1000
"#;

    #[test]
    fn parses_and_applies_defaults() {
        let c = ScenarioConfig::parse(ESCAPE).unwrap();
        assert_eq!(c.kind, ScenarioKind::OpenEscape);
        assert_eq!(c.seed, 3);
        assert_eq!(c.outputs, vec!["escape.json", "escape.csv", "support.csv"]);
        match c.scenario {
            Scenario::OpenEscape { numeric, .. } => {
                assert_eq!(numeric.samples_per_cell, 10);
                assert_eq!(numeric.support_threshold, 1e-9);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.config_hash.len(), 64);
    }

    #[test]
    fn missing_seed_names_the_key() {
        let text = ESCAPE.replace("seed = 3\n", "");
        let e = ScenarioConfig::parse(&text).unwrap_err();
        assert!(e.message.contains("seed"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = ESCAPE.replace("max_iters = 1000", "max_iters = 1000\nmax_iter = 3");
        let e = ScenarioConfig::parse(&text).unwrap_err();
        assert!(e.message.contains("max_iter"), "{e}");
        assert_eq!(e.line, Some(13));
    }

    #[test]
    fn nonpositive_tolerance_is_anchored() {
        let text = ESCAPE.replace("tol = 1e-10", "tol = -1.0");
        let e = ScenarioConfig::parse(&text).unwrap_err();
        assert_eq!(e.line, Some(11));
        assert!(e.message.contains("numeric.tol"));
    }

    #[test]
    fn unknown_artifact_rejected() {
        let text = ESCAPE.replace("seed = 3\n", "seed = 3\noutputs = [\"nope.csv\"]\n");
        let e = ScenarioConfig::parse(&text).unwrap_err();
        assert!(e.message.contains("nope.csv"));
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn explicit_branches() {
        let text = r#"
scenario_kind = "covering_check"
seed = 1

[model]
domain = [0.0, 1.0]
branches = [
  { lo = 0.0, hi = 0.5, kind = "affine", slope = 2.0, intercept = 0.0 },
  { lo = 0.5, hi = 1.0, kind = "affine", slope = -2.0, intercept = 2.0 },
]

[numeric]
a = [[0.0, 0.4]]
b = [[0.6, 1.0]]
t0 = 2
"#;
        let c = ScenarioConfig::parse(text).unwrap();
        match c.scenario {
            Scenario::CoveringCheck { map, .. } => {
                let tent = PiecewiseMap::tent(2.0).unwrap();
                for k in 0..=20 {
                    let x = k as f64 / 20.0;
                    assert!((map.evaluate(x).unwrap() - tent.evaluate(x).unwrap()).abs() < 1e-15);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pdmp_preset_and_bad_initial_state() {
        let text = r#"
scenario_kind = "pdmp_run"
seed = 1

[model]
preset = "two_mode"
a = 1.0
b = 3.0

[numeric]
initial_x = [1.5]
path_horizon = 5.0
n_particles = 10
times = [1.0]
window = { lo = 0.0, hi = 1.0, bins = 10 }
"#;
        let e = ScenarioConfig::parse(text).unwrap_err();
        assert_eq!(e.line, Some(11));
        let ok = text.replace("[1.5]", "[0.5]");
        let c = ScenarioConfig::parse(&ok).unwrap();
        assert_eq!(c.outputs, vec!["trajectory.csv", "densities.csv"]);
    }

    #[test]
    fn key_line_falls_back_to_header() {
        assert_eq!(key_line(ESCAPE, "model.branches"), Some(5));
        assert_eq!(key_line(ESCAPE, "seed"), Some(3));
        assert_eq!(key_line(ESCAPE, "nothing"), None);
    }
}
