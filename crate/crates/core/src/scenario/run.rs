//! Scenario execution and artifact emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::catalog::{dual_setup, hamiltonian, initial_state};
use super::config::{Analysis, Mode, ScenarioConfig};
use super::field_checks::maxwell_checks;
use crate::conservation::{conservation_report, gutzwiller_condition_residual, mass_balance_residual_with_potential};
use crate::deviation::{first_derivative_residual, initial_deviation, integrate_deviation, pairwise_oracle, stability_indicator};
use crate::dynamics::{self, dual_equivalence, FlatHamiltonian, GeodesicState, GutzwillerHamiltonian, PhaseState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::maxwell5d::encode_grid;

pub const EQUIVALENCE_TOL: f64 = 1e-6;
pub const CANCELLATION_TOL: f64 = 1e-10;
pub const ORACLE_RATIO: (f64, f64) = (3.2, 4.8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRecord {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub report: Value,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub field: String,
    pub span: f64,
    pub files: Vec<String>,
    pub analyses: BTreeMap<String, AnalysisRecord>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn ok(&self) -> bool {
        self.analyses.values().all(|a| a.status == Status::Pass)
    }

    /// The manifest without wall-clock data, for run-to-run comparison.
    pub fn semantic(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v.as_object_mut().expect("object").remove("timings_ms");
        v
    }
}

/// Outputs of a run held in memory.
#[derive(Debug, Clone)]
pub struct Executed {
    pub manifest: Manifest,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Executed {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

/// A run written to disk.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

impl RunArtifact {
    pub fn ok(&self) -> bool {
        self.manifest.ok()
    }

    /// `0` when every analysis passed, `1` otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.ok() {
            0
        } else {
            1
        }
    }
}

struct Outcome {
    status: Status,
    message: Option<String>,
    report: Value,
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(pass: bool, report: Value, files: Vec<(String, Vec<u8>)>) -> Self {
        Self {
            status: if pass { Status::Pass } else { Status::Fail },
            message: None,
            report,
            files,
        }
    }

    fn from_result(r: Result<Outcome>) -> Self {
        r.unwrap_or_else(|e| Self {
            status: Status::Error,
            message: Some(e.to_string()),
            report: Value::Null,
            files: Vec::new(),
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

#[derive(Clone, Copy)]
enum Task {
    Trajectory,
    Run(Analysis),
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Trajectory => "trajectory",
            Task::Run(a) => a.name(),
        }
    }
}

/// Runs every requested analysis (concurrently) and keeps the outputs in memory.
pub fn execute(cfg: &ScenarioConfig) -> Executed {
    let setup = hamiltonian(cfg).map(|h| {
        let st = initial_state(cfg, &h);
        (h, st)
    });
    let mut tasks = vec![Task::Trajectory];
    tasks.extend(cfg.analyses.iter().map(|a| Task::Run(*a)));
    let results: Vec<(Task, Outcome, f64)> = tasks
        .par_iter()
        .map(|&task| {
            let t0 = Instant::now();
            let out = Outcome::from_result(match (task, &setup) {
                (Task::Run(Analysis::Fields), _) => fields(cfg),
                (_, Err(e)) => Err(e.clone()),
                (Task::Trajectory, Ok((h, st))) => trajectory(cfg, h, st),
                (Task::Run(Analysis::Equivalence), Ok((h, st))) => equivalence(cfg, h, st),
                (Task::Run(Analysis::Deviation), Ok((h, st))) => deviation(cfg, h, st),
                (Task::Run(Analysis::Conservation), Ok((h, st))) => conservation(cfg, h, st),
            });
            (task, out, t0.elapsed().as_secs_f64() * 1e3)
        })
        .collect();

    let mut analyses = BTreeMap::new();
    let mut timings_ms = BTreeMap::new();
    let mut files = Vec::new();
    for (task, out, ms) in results {
        let names: Vec<String> = out.files.iter().map(|(n, _)| n.clone()).collect();
        files.extend(out.files);
        timings_ms.insert(task.name().to_string(), ms);
        analyses.insert(
            task.name().to_string(),
            AnalysisRecord {
                status: out.status,
                message: out.message,
                report: out.report,
                files: names,
            },
        );
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        mode: cfg.mode,
        field: cfg.field.spec.id().to_string(),
        span: cfg.span,
        files: files.iter().map(|(n, _)| n.clone()).collect(),
        analyses,
        timings_ms,
    };
    Executed { manifest, files }
}

/// [`execute`] and write everything under `cfg.output`; `manifest.json` last.
pub fn run(cfg: &ScenarioConfig) -> Result<RunArtifact> {
    run_into(cfg, &cfg.output)
}

pub fn run_into(cfg: &ScenarioConfig, dir: &Path) -> Result<RunArtifact> {
    let ex = execute(cfg);
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(ex.files.len() + 1);
    for (name, bytes) in &ex.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, to_json(&ex.manifest))?;
    written.push(path);
    Ok(RunArtifact {
        dir: dir.to_path_buf(),
        manifest: ex.manifest,
        files: written,
    })
}

fn trajectory(cfg: &ScenarioConfig, h: &FlatHamiltonian, st: &PhaseState) -> Result<Outcome> {
    let tr = dynamics::integrate(
        &|s, y: &[f64]| h.rhs(s, y),
        st.s,
        &st.to_vec(),
        cfg.span,
        &cfg.integrator,
        |s, y| h.diagnostics(s, y),
    )?;
    let report = json!({
        "samples": tr.len(),
        "steps": tr.stats.steps,
        "rejections": tr.stats.rejections,
        "rhs_evals": tr.stats.rhs_evals,
        "K0": tr.samples[0].k,
        "K_end": tr.last().k,
    });
    Ok(Outcome::new(true, report, vec![("trajectory.csv".into(), tr.to_csv().into_bytes())]))
}

fn equivalence(cfg: &ScenarioConfig, h: &FlatHamiltonian, st: &PhaseState) -> Result<Outcome> {
    let rep = dual_equivalence(h, st, cfg.span, &cfg.sampled_integrator())?;
    let pass = rep.max_position_error <= EQUIVALENCE_TOL;
    let report = json!({
        "shell": rep.shell,
        "max_position_error": rep.max_position_error,
        "max_velocity_error": rep.max_velocity_error,
        "samples": rep.samples,
        "threshold": EQUIVALENCE_TOL,
    });
    let files = vec![
        ("equivalence_hamilton.csv".into(), rep.hamilton.to_csv().into_bytes()),
        ("equivalence_dual.csv".into(), rep.dual.to_csv().into_bytes()),
        ("equivalence.json".into(), to_json(&report)),
    ];
    Ok(Outcome::new(pass, report, files))
}

/// Unit offset direction: the configured one or a seeded random draw.
fn offset_direction(cfg: &ScenarioConfig) -> Vec<f64> {
    let d = cfg.dim();
    let raw = match &cfg.deviation.offset {
        Some(o) => o.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    };
    let n = linalg::norm(&raw);
    raw.into_iter().map(|v| v / n).collect()
}

fn deviation(cfg: &ScenarioConfig, h: &FlatHamiltonian, st: &PhaseState) -> Result<Outcome> {
    let d = cfg.dim();
    let (metric, u0) = dual_setup(h, st)?;
    let base = GeodesicState::new(st.x.clone(), u0, st.s);
    let dir = offset_direction(cfg);
    let shifted = |scale: f64| -> Vec<f64> { dir.iter().map(|v| v * scale).collect() };
    let off = shifted(cfg.deviation.scale);
    let other = GeodesicState::new(
        (0..d).map(|i| base.x[i] + off[i]).collect(),
        (0..d).map(|i| base.v_low[i] + off[d + i]).collect(),
        base.s,
    );
    let dev = initial_deviation(&metric, &base, &other)?;
    let tr = integrate_deviation(&metric, &base, &dev, cfg.span, &cfg.sampled_integrator())?;
    let stability = stability_indicator(&tr.s, &tr.norms())?;

    let full = pairwise_oracle(&metric, &base, &shifted(cfg.deviation.oracle_scale), cfg.deviation.oracle_span, &cfg.integrator)?;
    let half = pairwise_oracle(
        &metric,
        &base,
        &shifted(0.5 * cfg.deviation.oracle_scale),
        cfg.deviation.oracle_span,
        &cfg.integrator,
    )?;
    let ratio = full.max_mismatch / half.max_mismatch;
    // a linear flow leaves only roundoff in the mismatch
    let linear = full.max_mismatch <= 1e-12;
    let cancellation = first_derivative_residual(&metric, &base.x, &base.v_low, base.s)?;
    let pass = cancellation <= CANCELLATION_TOL && (linear || (ORACLE_RATIO.0..=ORACLE_RATIO.1).contains(&ratio));
    let oracle = json!({
        "oracle_scale": cfg.deviation.oracle_scale,
        "oracle_span": cfg.deviation.oracle_span,
        "max_mismatch": full.max_mismatch,
        "max_mismatch_half": half.max_mismatch,
        "ratio": ratio,
        "linear_flow": linear,
        "cancellation_residual": cancellation,
    });
    let report = json!({ "stability": stability, "oracle": oracle });
    let files = vec![
        ("deviation.csv".into(), tr.to_csv().into_bytes()),
        ("stability.json".into(), to_json(&stability)),
        ("deviation_oracle.json".into(), to_json(&oracle)),
    ];
    Ok(Outcome::new(pass, report, files))
}

fn conservation(cfg: &ScenarioConfig, h: &FlatHamiltonian, st: &PhaseState) -> Result<Outcome> {
    let d = cfg.dim();
    let threshold = cfg.conservation.threshold;
    let traj = dynamics::integrate(
        &|s, y: &[f64]| h.rhs(s, y),
        st.s,
        &st.to_vec(),
        cfg.span,
        &cfg.sampled_integrator(),
        |s, y| h.diagnostics(s, y),
    )?;
    let (metric, _) = dual_setup(h, st)?;
    let gz = GutzwillerHamiltonian {
        params: h.params,
        metric: metric.clone(),
    };
    let condition = |s: f64, y: &[f64]| -> Result<f64> {
        let (x, p) = y.split_at(d);
        let u = gz.lowered_velocity(x, p, s)?;
        gutzwiller_condition_residual(&metric, x, &u, s)
    };
    let is_static = h.is_static();
    let k0 = traj.samples[0].k;
    let tol = threshold * k0.abs().max(1.0);
    let report = match cfg.mode {
        Mode::Rel => {
            let rep = conservation_report(&h.params, h.potential.as_ref(), &traj, Some(&condition), threshold)?;
            let decomposition = mass_balance_residual_with_potential(&h.params, h.potential.as_ref(), &traj)?.decomposition_error();
            let pass = if is_static { rep.conserved } else { decomposition <= tol };
            (pass, json!({
                "K0": rep.K0,
                "max_dK_rel": rep.max_dK_rel,
                "max_balance_residual": rep.max_balance_residual,
                "max_condition_residual": rep.max_condition_residual,
                "decomposition_error": decomposition,
                "conserved": rep.conserved,
                "static": is_static,
                "threshold": threshold,
            }))
        }
        Mode::Nr => {
            let max_dk_rel = traj
                .samples
                .iter()
                .map(|p| (p.k - k0).abs() / k0.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            let mut max_condition: f64 = 0.0;
            for p in &traj.samples {
                max_condition = max_condition.max(condition(p.s, &p.state)?.abs());
            }
            let conserved = max_dk_rel <= threshold && max_condition <= tol;
            (conserved, json!({
                "K0": k0,
                "max_dK_rel": max_dk_rel,
                "max_balance_residual": null,
                "max_condition_residual": max_condition,
                "decomposition_error": null,
                "conserved": conserved,
                "static": is_static,
                "threshold": threshold,
            }))
        }
    };
    let (pass, report) = report;
    Ok(Outcome::new(pass, report.clone(), vec![("conservation.json".into(), to_json(&report))]))
}

fn fields(cfg: &ScenarioConfig) -> Result<Outcome> {
    let (report, a, j) = maxwell_checks(&cfg.maxwell)?;
    let (abin, ajson) = encode_grid(&a);
    let (jbin, jjson) = encode_grid(&j);
    let files = vec![
        ("fields.json".into(), to_json(&report)),
        ("fields_a.bin".into(), abin),
        ("fields_a.json".into(), ajson.into_bytes()),
        ("fields_j.bin".into(), jbin),
        ("fields_j.json".into(), jjson.into_bytes()),
    ];
    let pass = report.passed();
    Ok(Outcome::new(pass, serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?, files))
}
