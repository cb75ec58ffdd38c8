//! TOML scenario files.
//!
//! ```toml
//! mode = "nr"                 # "nr" (3D, E-shell) or "rel" (4D, K-shell)
//! span = 62.83
//! seed = 7                    # probe/offset generator
//! analyses = ["equivalence", "deviation", "conservation", "fields"]
//! output = "out/oscillator"
//!
//! [particle]                  # defaults: mass = 1, charge = 1
//! mass = 1.0
//! charge = 0.0
//!
//! [field]
//! id = "harmonic"             # see CATALOG_IDS
//! k = 1.0
//! confine = 0.0               # optional extra isotropic harmonic term
//!
//! [initial]
//! x = [1.2, 0.0, 0.0]
//! p = [0.0, 0.6, 0.4472135954999579]   # or v = [...]
//!
//! [integrator]                # method = "dopri" | "rk4" (needs step)
//! rel_tol = 1e-10
//! sample = 0.05
//! ```
//!
//! Optional `[deviation]`, `[conservation]` and `[maxwell]` tables tune the
//! individual analyses.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::integrate::{IntegratorConfig, Method, Sampling};

pub const CATALOG_IDS: [&str; 7] = [
    "zero",
    "uniform_E",
    "uniform_B",
    "coulomb",
    "harmonic",
    "plane_wave_a5",
    "tau_linear_a5",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nr,
    Rel,
}

impl Mode {
    pub fn dim(self) -> usize {
        match self {
            Mode::Nr => 3,
            Mode::Rel => 4,
        }
    }

    /// Indices of the spatial coordinates.
    pub fn spatial_axes(self) -> Vec<usize> {
        match self {
            Mode::Nr => vec![0, 1, 2],
            Mode::Rel => vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Equivalence,
    Deviation,
    Conservation,
    Fields,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Equivalence => "equivalence",
            Analysis::Deviation => "deviation",
            Analysis::Conservation => "conservation",
            Analysis::Fields => "fields",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "equivalence" => Analysis::Equivalence,
            "deviation" => Analysis::Deviation,
            "conservation" => Analysis::Conservation,
            "fields" => Analysis::Fields,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleConfig {
    pub mass: f64,
    pub charge: f64,
}

/// Catalog entry with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "id")]
pub enum FieldSpec {
    #[serde(rename = "zero")]
    Zero,
    /// Uniform electric field (spatial components).
    #[serde(rename = "uniform_E")]
    UniformE { e: [f64; 3] },
    /// Uniform magnetic field, symmetric gauge.
    #[serde(rename = "uniform_B")]
    UniformB { b: [f64; 3] },
    /// `strength / |r|` in the scalar slot (`phi` or `a5`).
    #[serde(rename = "coulomb")]
    Coulomb { strength: f64, softening: f64 },
    /// `k/2 sum x_a^2` as the potential `V`.
    #[serde(rename = "harmonic")]
    Harmonic { k: f64, axes: Vec<usize> },
    /// `amplitude cos(k.x - frequency tau + phase)` as `a5`.
    #[serde(rename = "plane_wave_a5")]
    PlaneWaveA5 {
        amplitude: f64,
        wavevector: Vec<f64>,
        frequency: f64,
        phase: f64,
    },
    /// `gradient.x + rate tau + offset` as `a5`.
    #[serde(rename = "tau_linear_a5")]
    TauLinearA5 { gradient: Vec<f64>, rate: f64, offset: f64 },
}

impl FieldSpec {
    pub fn id(&self) -> &'static str {
        match self {
            FieldSpec::Zero => "zero",
            FieldSpec::UniformE { .. } => "uniform_E",
            FieldSpec::UniformB { .. } => "uniform_B",
            FieldSpec::Coulomb { .. } => "coulomb",
            FieldSpec::Harmonic { .. } => "harmonic",
            FieldSpec::PlaneWaveA5 { .. } => "plane_wave_a5",
            FieldSpec::TauLinearA5 { .. } => "tau_linear_a5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldConfig {
    pub spec: FieldSpec,
    /// Extra `confine/2 |r|^2` potential on the spatial axes.
    pub confine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMomentum {
    /// Canonical momentum `p`.
    Canonical(Vec<f64>),
    /// Velocity `dx/ds`.
    Velocity(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialConfig {
    pub x: Vec<f64>,
    pub momentum: InitialMomentum,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationConfig {
    /// Position then lowered-velocity offset direction (`2d` entries); random when absent.
    pub offset: Option<Vec<f64>>,
    pub scale: f64,
    pub oracle_scale: f64,
    pub oracle_span: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationConfig {
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxwellConfig {
    pub sigma: f64,
    pub points: [usize; 4],
    pub spacing: [f64; 4],
    pub tau_points: usize,
    /// Lattice index of the `tau` mode used by the plane-wave checks.
    pub mode: usize,
    /// Spatial wavevector of the plane-wave checks.
    pub wavevector: [f64; 3],
    /// Half-width of the `tau` window used for the zero-mode reduction.
    pub tau_extent: f64,
    /// Grid file stem to analyse in addition to the built-in checks.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub span: f64,
    pub seed: u64,
    pub analyses: Vec<Analysis>,
    pub output: PathBuf,
    pub particle: ParticleConfig,
    pub field: FieldConfig,
    pub initial: InitialConfig,
    pub integrator: IntegratorConfig,
    /// Spacing of uniformly sampled trajectories (equivalence, conservation, deviation).
    pub sample: f64,
    pub deviation: DeviationConfig,
    pub conservation: ConservationConfig,
    pub maxwell: MaxwellConfig,
}

impl ScenarioConfig {
    pub fn dim(&self) -> usize {
        self.mode.dim()
    }

    /// SHA-256 of the canonical JSON form, so formatting changes do not alter it.
    /// The output directory is left out: it says where results go, not what they are.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// Uniformly sampled variant of the integrator settings.
    pub fn sampled_integrator(&self) -> IntegratorConfig {
        self.integrator.with_grid(self.sample)
    }
}

/// One schema problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Schema { violations: Vec<Violation> },
    #[error("unknown field catalog id \"{id}\"; valid ids: {}", .valid.join(", "))]
    UnknownCatalogId { id: String, valid: Vec<String> },
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e
            .span()
            .map(|r| line_col(text, r.start))
            .unwrap_or((0, 0));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut r = Reader::default();
    let cfg = build(&mut r, &table)?;
    if r.violations.is_empty() {
        Ok(cfg.expect("no violations means every field was read"))
    } else {
        Err(ConfigError::Schema {
            violations: r.violations,
        })
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[derive(Default)]
struct Reader {
    violations: Vec<Violation>,
}

impl Reader {
    fn fail(&mut self, field: &str, reason: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            reason: reason.into(),
        });
    }

    fn known_keys(&mut self, t: &Table, prefix: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.fail(&join(prefix, k), "is not a recognized key");
            }
        }
    }

    fn table<'a>(&mut self, t: &'a Table, key: &str) -> Option<&'a Table> {
        match t.get(key) {
            None => None,
            Some(Value::Table(inner)) => Some(inner),
            Some(_) => {
                self.fail(key, "must be a table");
                None
            }
        }
    }

    fn number(&mut self, t: Option<&Table>, prefix: &str, key: &str) -> Option<f64> {
        let name = join(prefix, key);
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::Float(v)) if v.is_finite() => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(_) => {
                self.fail(&name, "must be a finite number");
                None
            }
        }
    }

    fn positive(&mut self, t: Option<&Table>, prefix: &str, key: &str, default: Option<f64>) -> Option<f64> {
        let name = join(prefix, key);
        match self.number(t, prefix, key) {
            Some(v) if v > 0.0 => Some(v),
            Some(_) => {
                self.fail(&name, "must be positive");
                None
            }
            None if t.is_some_and(|t| t.contains_key(key)) => None,
            None => {
                if default.is_none() {
                    self.fail(&name, "is required");
                }
                default
            }
        }
    }

    fn vector(&mut self, t: Option<&Table>, prefix: &str, key: &str, len: usize) -> Option<Vec<f64>> {
        let name = join(prefix, key);
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for it in items {
                    match it {
                        Value::Float(v) if v.is_finite() => out.push(*v),
                        Value::Integer(v) => out.push(*v as f64),
                        _ => {
                            self.fail(&name, "must contain only finite numbers");
                            return None;
                        }
                    }
                }
                if out.len() != len {
                    self.fail(&name, format!("must have {len} entries, found {}", out.len()));
                    return None;
                }
                Some(out)
            }
            Some(_) => {
                self.fail(&name, "must be an array of numbers");
                None
            }
        }
    }

    fn integer(&mut self, t: Option<&Table>, prefix: &str, key: &str) -> Option<i64> {
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::Integer(v)) => Some(*v),
            Some(_) => {
                self.fail(&join(prefix, key), "must be an integer");
                None
            }
        }
    }

    fn string<'a>(&mut self, t: Option<&'a Table>, prefix: &str, key: &str) -> Option<&'a str> {
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.fail(&join(prefix, key), "must be a string");
                None
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn to3(v: Vec<f64>) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Reads everything, collecting violations; returns `None` when any field is unusable.
fn build(r: &mut Reader, root: &Table) -> Result<Option<ScenarioConfig>, ConfigError> {
    r.known_keys(
        root,
        "",
        &[
            "mode",
            "span",
            "seed",
            "analyses",
            "output",
            "particle",
            "field",
            "initial",
            "integrator",
            "deviation",
            "conservation",
            "maxwell",
        ],
    );
    let top = Some(root);
    let mode = match r.string(top, "", "mode") {
        Some("nr") => Some(Mode::Nr),
        Some("rel") => Some(Mode::Rel),
        Some(other) => {
            r.fail("mode", format!("must be \"nr\" or \"rel\", found \"{other}\""));
            None
        }
        None => {
            if !root.contains_key("mode") {
                r.fail("mode", "is required");
            }
            None
        }
    };
    let span = r.positive(top, "", "span", None);
    let seed = match r.integer(top, "", "seed") {
        Some(v) if v >= 0 => Some(v as u64),
        Some(_) => {
            r.fail("seed", "must be non-negative");
            None
        }
        None => Some(0),
    };
    let mut analyses = BTreeSet::new();
    match root.get("analyses") {
        None => {}
        Some(Value::Array(items)) => {
            for it in items {
                match it.as_str().and_then(Analysis::parse) {
                    Some(a) => {
                        analyses.insert(a);
                    }
                    None => r.fail(
                        "analyses",
                        format!("entry {it} is not one of equivalence, deviation, conservation, fields"),
                    ),
                }
            }
        }
        Some(_) => r.fail("analyses", "must be an array of strings"),
    }
    let output = PathBuf::from(r.string(top, "", "output").unwrap_or("out"));

    let particle_t = r.table(root, "particle");
    if let Some(t) = particle_t {
        r.known_keys(t, "particle", &["mass", "charge"]);
    }
    let mass = r.positive(particle_t, "particle", "mass", Some(1.0));
    let charge = r.number(particle_t, "particle", "charge").unwrap_or(1.0);

    let field_t = r.table(root, "field");
    let field = match (field_t, mode) {
        (None, _) => {
            if !root.contains_key("field") {
                r.fail("field", "is required");
            }
            None
        }
        (Some(t), mode) => read_field(r, t, mode)?,
    };

    let d = mode.map(Mode::dim);
    let init_t = r.table(root, "initial");
    if init_t.is_none() && !root.contains_key("initial") {
        r.fail("initial", "is required");
    }
    let initial = match (init_t, d) {
        (Some(t), Some(d)) => {
            r.known_keys(t, "initial", &["x", "p", "v", "s"]);
            let x = r.vector(Some(t), "initial", "x", d);
            if !t.contains_key("x") {
                r.fail("initial.x", "is required");
            }
            let p = r.vector(Some(t), "initial", "p", d);
            let v = r.vector(Some(t), "initial", "v", d);
            let momentum = match (t.contains_key("p"), t.contains_key("v")) {
                (true, true) => {
                    r.fail("initial", "must give exactly one of p and v");
                    None
                }
                (false, false) => {
                    r.fail("initial", "needs a momentum p or a velocity v");
                    None
                }
                (true, false) => p.map(InitialMomentum::Canonical),
                (false, true) => v.map(InitialMomentum::Velocity),
            };
            let s = r.number(Some(t), "initial", "s").unwrap_or(0.0);
            match (x, momentum) {
                (Some(x), Some(momentum)) => Some(InitialConfig { x, momentum, s }),
                _ => None,
            }
        }
        _ => None,
    };

    let int_t = r.table(root, "integrator");
    if let Some(t) = int_t {
        r.known_keys(
            t,
            "integrator",
            &["method", "step", "rel_tol", "abs_tol", "max_step", "max_steps", "sample"],
        );
    }
    let method = match r.string(int_t, "integrator", "method").unwrap_or("dopri") {
        "dopri" => Some(Method::DormandPrince),
        "rk4" => r
            .positive(int_t, "integrator", "step", None)
            .map(|step| Method::Rk4 { step }),
        other => {
            r.fail("integrator.method", format!("must be \"dopri\" or \"rk4\", found \"{other}\""));
            None
        }
    };
    let rel_tol = r.positive(int_t, "integrator", "rel_tol", Some(1e-10));
    let abs_tol = r.positive(int_t, "integrator", "abs_tol", Some(1e-12));
    let max_step = r.positive(int_t, "integrator", "max_step", Some(f64::INFINITY));
    let max_steps = match r.integer(int_t, "integrator", "max_steps") {
        Some(v) if v > 0 => Some(v as usize),
        Some(_) => {
            r.fail("integrator.max_steps", "must be positive");
            None
        }
        None => Some(2_000_000),
    };
    let sample = r.positive(int_t, "integrator", "sample", span.map(|s| s / 1000.0).or(Some(1.0)));

    let dev_t = r.table(root, "deviation");
    if let Some(t) = dev_t {
        r.known_keys(t, "deviation", &["offset", "scale", "oracle_scale", "oracle_span"]);
    }
    let offset = d.and_then(|d| r.vector(dev_t, "deviation", "offset", 2 * d));
    if let Some(o) = &offset {
        if o.iter().all(|v| *v == 0.0) {
            r.fail("deviation.offset", "must not be zero");
        }
    }
    let dev_scale = r.positive(dev_t, "deviation", "scale", Some(1e-6));
    let oracle_scale = r.positive(dev_t, "deviation", "oracle_scale", Some(1e-3));
    let oracle_span = r.positive(dev_t, "deviation", "oracle_span", span.or(Some(1.0)));

    let cons_t = r.table(root, "conservation");
    if let Some(t) = cons_t {
        r.known_keys(t, "conservation", &["threshold"]);
    }
    let threshold = r.positive(cons_t, "conservation", "threshold", Some(1e-6));

    let maxwell = read_maxwell(r, root);

    if !r.violations.is_empty() {
        return Ok(None);
    }
    let integrator = IntegratorConfig {
        method: method.unwrap(),
        rel_tol: rel_tol.unwrap(),
        abs_tol: abs_tol.unwrap(),
        max_step: max_step.unwrap(),
        max_steps: max_steps.unwrap(),
        sampling: Sampling::EveryStep,
    };
    Ok(Some(ScenarioConfig {
        mode: mode.unwrap(),
        span: span.unwrap(),
        seed: seed.unwrap(),
        analyses: analyses.into_iter().collect(),
        output,
        particle: ParticleConfig {
            mass: mass.unwrap(),
            charge,
        },
        field: field.unwrap(),
        initial: initial.unwrap(),
        integrator,
        sample: sample.unwrap(),
        deviation: DeviationConfig {
            offset,
            scale: dev_scale.unwrap(),
            oracle_scale: oracle_scale.unwrap(),
            oracle_span: oracle_span.unwrap(),
        },
        conservation: ConservationConfig {
            threshold: threshold.unwrap(),
        },
        maxwell: maxwell.unwrap(),
    }))
}

fn read_field(r: &mut Reader, t: &Table, mode: Option<Mode>) -> Result<Option<FieldConfig>, ConfigError> {
    let id = match t.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            r.fail("field.id", "must be a string");
            return Ok(None);
        }
        None => {
            r.fail("field.id", "is required");
            return Ok(None);
        }
    };
    if !CATALOG_IDS.contains(&id.as_str()) {
        return Err(ConfigError::UnknownCatalogId {
            id,
            valid: CATALOG_IDS.iter().map(|s| s.to_string()).collect(),
        });
    }
    let Some(mode) = mode else { return Ok(None) };
    let d = mode.dim();
    let f = Some(t);
    let p = "field";
    let params: &[&str] = match id.as_str() {
        "zero" => &[],
        "uniform_E" => &["e"],
        "uniform_B" => &["b"],
        "coulomb" => &["strength", "softening"],
        "harmonic" => &["k", "axes"],
        "plane_wave_a5" => &["amplitude", "wavevector", "frequency", "phase"],
        _ => &["gradient", "rate", "offset"],
    };
    let mut allowed = vec!["id", "confine"];
    allowed.extend_from_slice(params);
    r.known_keys(t, p, &allowed);
    let confine = r.number(f, p, "confine").unwrap_or(0.0);
    let required = |r: &mut Reader, key: &str| {
        if !t.contains_key(key) {
            r.fail(&join(p, key), "is required");
        }
    };
    if id.ends_with("_a5") && mode != Mode::Rel {
        r.fail("field.id", format!("\"{id}\" needs mode = \"rel\""));
        return Ok(None);
    }
    let spec = match id.as_str() {
        "zero" => Some(FieldSpec::Zero),
        "uniform_E" => {
            required(r, "e");
            r.vector(f, p, "e", 3).map(|e| FieldSpec::UniformE { e: to3(e) })
        }
        "uniform_B" => {
            required(r, "b");
            r.vector(f, p, "b", 3).map(|b| FieldSpec::UniformB { b: to3(b) })
        }
        "coulomb" => {
            required(r, "strength");
            let strength = r.number(f, p, "strength");
            let softening = r.number(f, p, "softening").unwrap_or(0.0);
            if softening < 0.0 {
                r.fail("field.softening", "must be non-negative");
            }
            strength.map(|strength| FieldSpec::Coulomb { strength, softening })
        }
        "harmonic" => {
            let k = r.number(f, p, "k").unwrap_or(1.0);
            let axes = match t.get("axes") {
                None => Some(mode.spatial_axes()),
                Some(Value::Array(items)) => {
                    let axes: Option<Vec<usize>> = items
                        .iter()
                        .map(|v| v.as_integer().filter(|&a| a >= 0 && (a as usize) < d).map(|a| a as usize))
                        .collect();
                    if axes.is_none() {
                        r.fail("field.axes", format!("must list coordinate indices below {d}"));
                    }
                    axes
                }
                Some(_) => {
                    r.fail("field.axes", "must be an array of integers");
                    None
                }
            };
            axes.map(|axes| FieldSpec::Harmonic { k, axes })
        }
        "plane_wave_a5" => {
            required(r, "wavevector");
            let amplitude = r.number(f, p, "amplitude").unwrap_or(1.0);
            let frequency = r.number(f, p, "frequency").unwrap_or(0.0);
            let phase = r.number(f, p, "phase").unwrap_or(0.0);
            r.vector(f, p, "wavevector", d).map(|wavevector| FieldSpec::PlaneWaveA5 {
                amplitude,
                wavevector,
                frequency,
                phase,
            })
        }
        _ => {
            required(r, "rate");
            let gradient = r.vector(f, p, "gradient", d).unwrap_or_else(|| vec![0.0; d]);
            let offset = r.number(f, p, "offset").unwrap_or(0.0);
            r.number(f, p, "rate").map(|rate| FieldSpec::TauLinearA5 { gradient, rate, offset })
        }
    };
    Ok(spec.map(|spec| FieldConfig { spec, confine }))
}

fn read_maxwell(r: &mut Reader, root: &Table) -> Option<MaxwellConfig> {
    let t = r.table(root, "maxwell");
    let p = "maxwell";
    if let Some(t) = t {
        r.known_keys(
            t,
            p,
            &["sigma", "points", "spacing", "tau_points", "mode", "wavevector", "tau_extent", "input"],
        );
    }
    let sigma = r.number(t, p, "sigma").unwrap_or(1.0);
    if sigma != 1.0 && sigma != -1.0 {
        r.fail("maxwell.sigma", "must be 1 or -1");
    }
    let points = match r.vector(t, p, "points", 4) {
        Some(v) => {
            if v.iter().any(|&n| n < 4.0 || n.fract() != 0.0) {
                r.fail("maxwell.points", "must be integers of at least 4");
            }
            [v[0] as usize, v[1] as usize, v[2] as usize, v[3] as usize]
        }
        None => [4, 8, 8, 4],
    };
    let spacing = match r.vector(t, p, "spacing", 4) {
        Some(v) => {
            if v.iter().any(|&h| h <= 0.0) {
                r.fail("maxwell.spacing", "must be positive");
            }
            [v[0], v[1], v[2], v[3]]
        }
        None => [0.1; 4],
    };
    let tau_points = match r.integer(t, p, "tau_points") {
        Some(v) if v >= 4 => v as usize,
        Some(_) => {
            r.fail("maxwell.tau_points", "must be at least 4");
            4
        }
        None => 16,
    };
    let mode = match r.integer(t, p, "mode") {
        Some(v) if v >= 0 && (v as usize) < tau_points => v as usize,
        Some(_) => {
            r.fail("maxwell.mode", "must index a tau mode");
            0
        }
        None => 1,
    };
    let wavevector = r.vector(t, p, "wavevector", 3).map(to3).unwrap_or([1.0, 0.5, 0.0]);
    let tau_extent = r.positive(t, p, "tau_extent", Some(10.0))?;
    let input = r.string(t, p, "input").map(PathBuf::from);
    Some(MaxwellConfig {
        sigma,
        points,
        spacing,
        tau_points,
        mode,
        wavevector,
        tau_extent,
        input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const OSC: &str = r#"
mode = "nr"
span = 62.83185307179586
analyses = ["equivalence"]

[field]
id = "harmonic"

[initial]
x = [1.2, 0.0, 0.0]
p = [0.0, 0.6, 0.4472135954999579]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(OSC).unwrap();
        assert_eq!(c.mode, Mode::Nr);
        assert_eq!(c.particle.mass, 1.0);
        assert_eq!(c.seed, 0);
        assert_eq!(c.integrator.rel_tol, 1e-10);
        assert_eq!(c.field.spec, FieldSpec::Harmonic { k: 1.0, axes: vec![0, 1, 2] });
        assert_eq!(c.sample, c.span / 1000.0);
        assert_eq!(c.hash(), parse_config(&format!("{OSC}\n# comment\n")).unwrap().hash());
        let mut moved = c.clone();
        moved.output = "elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
        moved.seed = 1;
        assert_ne!(moved.hash(), c.hash());
    }

    #[test]
    fn negative_span_is_schema_error() {
        let text = OSC.replace("span = 62.83185307179586", "span = -1");
        match parse_config(&text) {
            Err(ConfigError::Schema { violations }) => {
                assert_eq!(violations.len(), 1);
                assert_eq!(violations[0].to_string(), "span must be positive");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_violation_is_listed() {
        let text = OSC
            .replace("span = 62.83185307179586", "span = 0")
            .replace("x = [1.2, 0.0, 0.0]", "x = [1.2, 0.0]")
            .replace("analyses = [\"equivalence\"]", "analyses = [\"plots\"]");
        let Err(ConfigError::Schema { violations }) = parse_config(&text) else { panic!() };
        let fields: Vec<&str> = violations.iter().map(|v| v.field.as_str()).collect();
        assert_eq!(fields, ["span", "analyses", "initial.x"]);
    }

    #[test]
    fn unknown_catalog_id_lists_valid_ones() {
        let text = OSC.replace("id = \"harmonic\"", "id = \"uniform_Q\"");
        let err = parse_config(&text).unwrap_err();
        let ConfigError::UnknownCatalogId { id, valid } = &err else { panic!("{err:?}") };
        assert_eq!(id, "uniform_Q");
        assert_eq!(valid.len(), 7);
        assert!(err.to_string().contains("uniform_B"));
    }

    #[test]
    fn parse_error_has_position() {
        let err = parse_config("mode = \"nr\"\nspan = = 3\n").unwrap_err();
        let ConfigError::Parse { line, column, .. } = err else { panic!("{err:?}") };
        assert_eq!(line, 2);
        assert!(column > 1);
    }

    #[test]
    fn a5_fields_need_rel_mode() {
        let text = OSC.replace("id = \"harmonic\"", "id = \"tau_linear_a5\"\nrate = 0.3");
        let Err(ConfigError::Schema { violations }) = parse_config(&text) else { panic!() };
        assert_eq!(violations[0].field, "field.id");
    }
}
