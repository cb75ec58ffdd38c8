//! Hamilton flows, dual-geodesic flows and the maps between them.
//!
//! Two Hamiltonians are supported:
//!
//! * the flat form `H = eta_{mu nu} pi^mu pi^nu / 2m + U(x, s)` with
//!   `pi = p - e A` and effective potential `U = V - e phi` (`phi = A^0`
//!   or `a_5`), and
//! * the Gutzwiller form `K = g_{mu nu}(x, s) pi^mu pi^nu / 2m`, whose flow in
//!   the lowered velocity `u_mu = g_{mu nu} pi^nu / m` is the dual geodesic.
//!
//! On the shell `H = C` with `g = C/(C - U) eta` the Gutzwiller flow is the
//! flat flow reparameterized by `dt = f ds`, `f = C/(C - U)`; the mapped
//! velocity `g^{mu nu} u_nu` equals `pi^mu / m`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{
    extend_metric, field_strength, signature, ConformalMetric, ExtendedMetric, Gauge,
    ParticleParams, ScalarField, ScalarSum, ZeroScalar,
};
use crate::geometry::{self, Fault};
use crate::integrate::{self, IntegratorConfig, Sampling, Stats};
use crate::linalg;

/// `(x, p, s)` for Hamilton flows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub s: f64,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, p: Vec<f64>, s: f64) -> Self {
        Self { x, p, s }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = self.x.clone();
        y.extend_from_slice(&self.p);
        y
    }

    pub fn from_slice(s: f64, y: &[f64]) -> Self {
        let d = y.len() / 2;
        Self {
            x: y[..d].to_vec(),
            p: y[d..].to_vec(),
            s,
        }
    }
}

/// `(x, u = xdot_mu, s)` for dual-geodesic flows; `u` carries a lower index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicState {
    pub x: Vec<f64>,
    pub v_low: Vec<f64>,
    pub s: f64,
}

impl GeodesicState {
    pub fn new(x: Vec<f64>, v_low: Vec<f64>, s: f64) -> Self {
        Self { x, v_low, s }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = self.x.clone();
        y.extend_from_slice(&self.v_low);
        y
    }

    pub fn from_slice(s: f64, y: &[f64]) -> Self {
        let d = y.len() / 2;
        Self {
            x: y[..d].to_vec(),
            v_low: y[d..].to_vec(),
            s,
        }
    }
}

/// One stored point of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub s: f64,
    pub state: Vec<f64>,
    /// Position `x^mu`.
    pub x: Vec<f64>,
    /// Raised (physical) velocity.
    pub v: Vec<f64>,
    /// `H`/`K` at this sample.
    pub k: f64,
    /// Dynamical mass squared; relativistic flows only.
    pub mp2: Option<f64>,
}

/// Diagnostics attached to each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDiagnostics {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub k: f64,
    pub mp2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dim: usize,
    pub samples: Vec<Sample>,
    pub stats: Stats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    /// CSV with header `s,x0..,v0..,K,mp2`; `mp2` is empty when absent.
    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut out = String::from("s");
        for i in 0..d {
            out.push_str(&format!(",x{i}"));
        }
        for i in 0..d {
            out.push_str(&format!(",v{i}"));
        }
        out.push_str(",K,mp2\n");
        for smp in &self.samples {
            out.push_str(&format!("{:e}", smp.s));
            for v in smp.x.iter().chain(&smp.v) {
                out.push_str(&format!(",{v:e}"));
            }
            out.push_str(&format!(",{:e},", smp.k));
            if let Some(m) = smp.mp2 {
                out.push_str(&format!("{m:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Integrates `rhs` and attaches diagnostics to every stored sample.
pub fn integrate<F, D>(
    rhs: &F,
    s0: f64,
    y0: &[f64],
    span: f64,
    config: &IntegratorConfig,
    diagnostics: D,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
    D: Fn(f64, &[f64]) -> Result<SampleDiagnostics>,
{
    let sol = integrate::solve(rhs, s0, y0, span, config)?;
    let mut samples = Vec::with_capacity(sol.s.len());
    for (s, y) in sol.s.iter().zip(sol.y) {
        let dg = diagnostics(*s, &y)?;
        if !dg.k.is_finite() {
            return Err(Error::StepFailure {
                s: *s,
                reason: "non-finite diagnostic".into(),
            });
        }
        samples.push(Sample {
            s: *s,
            state: y,
            x: dg.x,
            v: dg.v,
            k: dg.k,
            mp2: dg.mp2,
        });
    }
    Ok(Trajectory {
        dim: y0.len() / 2,
        samples,
        stats: sol.stats,
    })
}

/// Flat-space Hamiltonian with scalar potential and gauge field.
#[derive(Clone)]
pub struct FlatHamiltonian {
    pub params: ParticleParams,
    /// `U = V - e phi`
    pub potential: Arc<dyn ScalarField>,
    pub gauge: Gauge,
    pub relativistic: bool,
}

impl FlatHamiltonian {
    /// `V` may be `None`; the gauge scalar enters as `-e phi`.
    pub fn new(params: ParticleParams, potential: Option<Arc<dyn ScalarField>>, gauge: Gauge) -> Result<Self> {
        let d = gauge.dim();
        if d != 3 && d != 4 {
            return Err(Error::DimensionMismatch {
                what: "Hamiltonian dimension (3 or 4)",
                expected: 3,
                got: d,
            });
        }
        let v = potential.unwrap_or_else(|| Arc::new(ZeroScalar { dim: d }));
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "potential",
                expected: d,
                got: v.dim(),
            });
        }
        let u: Arc<dyn ScalarField> = Arc::new(ScalarSum {
            dim: d,
            terms: vec![(1.0, v), (-params.charge, gauge.scalar.clone())],
        });
        Ok(Self {
            params,
            potential: u,
            gauge,
            relativistic: d == 4,
        })
    }

    pub fn dim(&self) -> usize {
        self.gauge.dim()
    }

    pub fn is_static(&self) -> bool {
        self.potential.is_static() && self.gauge.is_static()
    }

    /// `pi = p - e A`
    pub fn kinetic_momentum(&self, x: &[f64], p: &[f64], s: f64) -> Vec<f64> {
        let a = self.gauge.vector.value(x, s);
        p.iter().zip(a).map(|(p, a)| p - self.params.charge * a).collect()
    }

    pub fn value(&self, x: &[f64], p: &[f64], s: f64) -> f64 {
        let pi = self.kinetic_momentum(x, p, s);
        let sig = signature(self.dim());
        let kin: f64 = pi.iter().zip(&sig).map(|(p, g)| g * p * p).sum();
        kin / (2.0 * self.params.mass) + self.potential.value(x, s)
    }

    /// `-eta_{mu nu} pi^mu pi^nu`
    pub fn mass_squared(&self, x: &[f64], p: &[f64], s: f64) -> f64 {
        let pi = self.kinetic_momentum(x, p, s);
        let sig = signature(self.dim());
        -pi.iter().zip(&sig).map(|(p, g)| g * p * p).sum::<f64>()
    }

    /// `xdot^mu = pi^mu / m`
    pub fn velocity(&self, x: &[f64], p: &[f64], s: f64) -> Vec<f64> {
        self.kinetic_momentum(x, p, s)
            .into_iter()
            .map(|v| v / self.params.mass)
            .collect()
    }

    /// Canonical momentum for a given velocity.
    pub fn momentum_from_velocity(&self, x: &[f64], v: &[f64], s: f64) -> Vec<f64> {
        let a = self.gauge.vector.value(x, s);
        v.iter()
            .zip(a)
            .map(|(v, a)| self.params.mass * v + self.params.charge * a)
            .collect()
    }

    pub fn rhs(&self, s: f64, y: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let (x, p) = y.split_at(d);
        let m = self.params.mass;
        let e = self.params.charge;
        let sig = signature(d);
        let pi = self.kinetic_momentum(x, p, s);
        let jac = self.gauge.vector.jacobian(x, s);
        let gu = self.potential.gradient(x, s);
        let mut out = Vec::with_capacity(2 * d);
        out.extend(pi.iter().map(|v| v / m));
        let n = d + 1;
        for mu in 0..d {
            // dp_mu/ds = (e/m) pi_kappa dA^kappa/dx^mu - dU/dx^mu, raised with eta
            let mut acc = -gu[mu];
            for k in 0..d {
                acc += e / m * sig[k] * pi[k] * jac[k * n + mu];
            }
            out.push(sig[mu] * acc);
        }
        Ok(out)
    }

    pub fn diagnostics(&self, s: f64, y: &[f64]) -> Result<SampleDiagnostics> {
        let d = self.dim();
        let (x, p) = y.split_at(d);
        Ok(SampleDiagnostics {
            x: x.to_vec(),
            v: self.velocity(x, p, s),
            k: self.value(x, p, s),
            mp2: self.relativistic.then(|| self.mass_squared(x, p, s)),
        })
    }

    /// Conformal dual metric `C/(C - U) eta` with gauge row `(e/m) A`, on the shell `C`.
    pub fn dual_metric(&self, shell: f64) -> Result<ExtendedMetric> {
        let base = ConformalMetric::new(shell, self.potential.clone())?;
        extend_metric(
            Arc::new(base),
            Some(self.gauge.vector.clone()),
            &self.params.with_shell(shell),
            0.0,
        )
    }
}

/// Time derivative of a phase state under the flat Hamiltonian.
pub fn hamilton_rhs(h: &FlatHamiltonian, state: &PhaseState) -> Result<PhaseState> {
    let dy = h.rhs(state.s, &state.to_vec())?;
    Ok(PhaseState::from_slice(1.0, &dy))
}

/// Gutzwiller-form Hamiltonian `K = g_{mu nu} pi^mu pi^nu / 2m` built on an
/// extended metric (its gauge row supplies `(e/m) A`).
#[derive(Clone, Debug)]
pub struct GutzwillerHamiltonian {
    pub params: ParticleParams,
    pub metric: ExtendedMetric,
}

impl GutzwillerHamiltonian {
    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn kinetic_momentum(&self, x: &[f64], p: &[f64], s: f64) -> Vec<f64> {
        let w = self.metric.gauge_row(x, s);
        p.iter().zip(w).map(|(p, w)| p - self.params.mass * w).collect()
    }

    pub fn value(&self, x: &[f64], p: &[f64], s: f64) -> Result<f64> {
        let d = self.dim();
        let g = self.metric.lower(x, s)?;
        let pi = self.kinetic_momentum(x, p, s);
        Ok(linalg::quad_form(d, &g, &pi, &pi) / (2.0 * self.params.mass))
    }

    /// `u_mu = g_{mu nu} pi^nu / m`
    pub fn lowered_velocity(&self, x: &[f64], p: &[f64], s: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        let g = self.metric.lower(x, s)?;
        let pi = self.kinetic_momentum(x, p, s);
        Ok(linalg::mat_vec(d, &g, &pi)
            .into_iter()
            .map(|v| v / self.params.mass)
            .collect())
    }

    pub fn rhs(&self, s: f64, y: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let n = d + 1;
        let m = self.params.mass;
        let (x, p) = y.split_at(d);
        let jet = self.metric.jet(x, s)?;
        let pi = self.kinetic_momentum(x, p, s);
        let gpi = linalg::mat_vec(d, &jet.lower, &pi);
        let mut out: Vec<f64> = gpi.iter().zip(&jet.signature).map(|(v, g)| g * v / m).collect();
        for lam in 0..d {
            // D^lam g_{mu nu} = -(g D^lam G g)_{mu nu}
            let dg: Vec<f64> = (0..d * d).map(|k| jet.d_ext_at(lam, k / d, k % d)).collect();
            let tmp = linalg::mat_mul(d, &jet.lower, &dg);
            let dl = linalg::mat_mul(d, &tmp, &jet.lower);
            let mut dk = -linalg::quad_form(d, &dl, &pi, &pi) / (2.0 * m);
            for nu in 0..d {
                dk -= gpi[nu] * jet.d_ext[(lam * n + nu) * n + d];
            }
            out.push(-dk);
        }
        Ok(out)
    }
}

/// `dx^mu/ds = eta^{mu nu} u_nu`, `du_i/ds = -Gamma_i^{AB} U_A U_B`.
pub fn geodesic_rhs_dual(metric: &ExtendedMetric, state: &GeodesicState) -> Result<GeodesicState> {
    let dy = dual_rhs(metric, state.s, &state.to_vec(), None)?;
    Ok(GeodesicState::from_slice(1.0, &dy))
}

/// Flat-vector form of [`geodesic_rhs_dual`], with an optional deliberate fault.
pub fn dual_rhs(metric: &ExtendedMetric, s: f64, y: &[f64], fault: Option<Fault>) -> Result<Vec<f64>> {
    let d = metric.dim();
    let (x, u) = y.split_at(d);
    let conn = geometry::connection_with_fault(metric, x, s, fault)?;
    let sig = signature(d);
    let mut out: Vec<f64> = u.iter().zip(&sig).map(|(u, g)| g * u).collect();
    out.extend(conn.normal_form(u));
    Ok(out)
}

/// [`dual_rhs`] divided by the conformal factor: the same orbit in Hamilton time.
pub fn dual_rhs_hamilton_time(metric: &ExtendedMetric, s: f64, y: &[f64]) -> Result<Vec<f64>> {
    let d = metric.dim();
    let f = match metric.conformal_factor(&y[..d], s) {
        Some(f) => f?,
        None => 1.0,
    };
    Ok(dual_rhs(metric, s, y, None)?.into_iter().map(|v| v / f).collect())
}

/// The dual-geodesic acceleration written out from Hamilton's equations,
/// without the block structure:
///
/// `du_r = -Gamma_r^{km} u_k u_m - g_{rl}(dg^{lm}/ds + (e/m) F^{ml}) u_m - (e/m) g_{rl} dA^l/ds`.
pub fn raw_dual_acceleration(metric: &ExtendedMetric, x: &[f64], u: &[f64], s: f64) -> Result<Vec<f64>> {
    let d = metric.dim();
    let n = d + 1;
    let conn = geometry::connection(metric, x, s)?;
    let g = metric.lower(x, s)?;
    let inv = metric.base().inverse_jet(x, s)?;
    let k = metric.charge_ratio();
    let (f, da_ds) = match metric.gauge_vector() {
        Some(a) => {
            let gauge = Gauge::new(Arc::new(ZeroScalar { dim: d }), a.clone())?;
            let fs = field_strength(&gauge, x, s)?;
            let jac = a.jacobian(x, s);
            (fs.f, (0..d).map(|l| jac[l * n + d]).collect())
        }
        None => (vec![0.0; d * d], vec![0.0; d]),
    };
    let mut out = vec![0.0; d];
    for r in 0..d {
        let mut acc = 0.0;
        for kk in 0..d {
            for m in 0..d {
                acc -= conn.gamma_at(r, kk, m) * u[kk] * u[m];
            }
        }
        for l in 0..d {
            let mut inner = -k * da_ds[l];
            for m in 0..d {
                inner -= (inv.grad[(d * d + l) * d + m] + k * f[m * d + l]) * u[m];
            }
            acc += g[r * d + l] * inner;
        }
        out[r] = acc;
    }
    Ok(out)
}

/// `xdot^i = g^{ij} xdot_j`
pub fn tangent_map(metric: &ExtendedMetric, state: &GeodesicState) -> Result<Vec<f64>> {
    let d = metric.dim();
    if state.v_low.len() != d {
        return Err(Error::DimensionMismatch {
            what: "lowered velocity",
            expected: d,
            got: state.v_low.len(),
        });
    }
    let inv = metric.inverse(&state.x, state.s)?;
    Ok(linalg::mat_vec(d, &inv, &state.v_low))
}

/// Closed form of the mapped acceleration for a physical velocity `v`:
///
/// `a^r = -M^r_{jk} v^j v^k + (e/m) F^{rk} eta_kk v^k - (e/m) dA^r/ds`.
pub fn mapped_acceleration(
    params: &ParticleParams,
    metric: &ExtendedMetric,
    gauge: &Gauge,
    x: &[f64],
    v: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    let d = metric.dim();
    let n = d + 1;
    let mf = geometry::m_form(metric, x, s)?;
    let fs = field_strength(gauge, x, s)?;
    let jac = gauge.vector.jacobian(x, s);
    let sig = signature(d);
    let k = params.charge_ratio();
    let mut acc = mf.acceleration(v);
    for r in 0..d {
        for kk in 0..d {
            acc[r] += k * fs.get(r, kk) * sig[kk] * v[kk];
        }
        acc[r] -= k * jac[r * n + d];
    }
    Ok(acc)
}

/// Mapped acceleration by the chain rule through the dual geodesic:
/// `v = g^{-1} u`, `dv/dt = (dg^{-1}/dx^c v^c) u + g^{-1} du/ds / f`.
///
/// Valid for fields without explicit `s` dependence.
pub fn mapped_acceleration_chain(
    metric: &ExtendedMetric,
    x: &[f64],
    v: &[f64],
    s: f64,
    fault: Option<Fault>,
) -> Result<Vec<f64>> {
    let d = metric.dim();
    let jet = metric.jet(x, s)?;
    let f = match metric.conformal_factor(x, s) {
        Some(f) => f?,
        None => 1.0,
    };
    let u = linalg::mat_vec(d, &jet.lower, v);
    let mut y = x.to_vec();
    y.extend_from_slice(&u);
    let du = dual_rhs(metric, s, &y, fault)?;
    let mut acc = linalg::mat_vec(d, &jet.inverse, &du[d..]);
    for a in acc.iter_mut() {
        *a /= f;
    }
    for c in 0..d {
        let dg = &jet.d_inverse_upper[c * d * d..(c + 1) * d * d];
        let t = linalg::mat_vec(d, dg, &u);
        for i in 0..d {
            acc[i] += v[c] * t[i];
        }
    }
    Ok(acc)
}

/// Flat Lorentz force: `(e/m) F^{rk} eta_kk v^k - (e/m)(dA^r/ds - eta^{rr} dphi/dx^r)`.
pub fn lorentz_reference(params: &ParticleParams, gauge: &Gauge, x: &[f64], v: &[f64], s: f64) -> Result<Vec<f64>> {
    let d = gauge.dim();
    let fs = field_strength(gauge, x, s)?;
    let sig = signature(d);
    let k = params.charge_ratio();
    Ok((0..d)
        .map(|r| {
            let mut a = -k * fs.fifth[r];
            for kk in 0..d {
                a += k * fs.get(r, kk) * sig[kk] * v[kk];
            }
            a
        })
        .collect())
}

/// `xddot^mu = -M^mu_{rho nu} xdot^rho xdot^nu`; the gauge-free mapped flow.
pub fn geodesic_mapped(metric: &ExtendedMetric, x: &[f64], v: &[f64], s: f64) -> Result<Vec<f64>> {
    Ok(geometry::m_form(metric, x, s)?.acceleration(v))
}

/// Result of comparing a Hamilton orbit with its mapped dual geodesic.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub shell: f64,
    pub max_position_error: f64,
    pub max_velocity_error: f64,
    pub samples: usize,
    #[serde(skip)]
    pub hamilton: Trajectory,
    #[serde(skip)]
    pub dual: Trajectory,
}

/// Integrates the flat Hamilton flow and the dual geodesic (in Hamilton time)
/// from matching initial data and compares them on a common sample grid.
///
/// The shell value is taken from the initial condition. Fields must not
/// depend explicitly on `s`.
pub fn dual_equivalence(
    h: &FlatHamiltonian,
    state0: &PhaseState,
    span: f64,
    config: &IntegratorConfig,
) -> Result<EquivalenceReport> {
    if !h.is_static() {
        return Err(Error::InvalidParameter(
            "dual equivalence needs fields without explicit s dependence".into(),
        ));
    }
    let d = h.dim();
    let cfg = match config.sampling {
        Sampling::Grid(_) => *config,
        Sampling::EveryStep => config.with_grid(span / 1000.0),
    };
    let shell = h.value(&state0.x, &state0.p, state0.s);
    let metric = h.dual_metric(shell)?;
    let gz = GutzwillerHamiltonian {
        params: h.params.with_shell(shell),
        metric: metric.clone(),
    };
    let u0 = gz.lowered_velocity(&state0.x, &state0.p, state0.s)?;

    let ham = integrate(
        &|s, y: &[f64]| h.rhs(s, y),
        state0.s,
        &state0.to_vec(),
        span,
        &cfg,
        |s, y| h.diagnostics(s, y),
    )?;
    let mut y0 = state0.x.clone();
    y0.extend_from_slice(&u0);
    let m = h.params.mass;
    let dual = integrate(
        &|s, y: &[f64]| dual_rhs_hamilton_time(&metric, s, y),
        state0.s,
        &y0,
        span,
        &cfg,
        |s, y| {
            let (x, u) = y.split_at(d);
            let g = metric.lower(x, s)?;
            let v = linalg::mat_vec(d, &metric.inverse(x, s)?, u);
            Ok(SampleDiagnostics {
                x: x.to_vec(),
                k: m / 2.0 * linalg::quad_form(d, &g, &v, &v),
                mp2: None,
                v,
            })
        },
    )?;
    if ham.len() != dual.len() {
        return Err(Error::StepFailure {
            s: state0.s + span,
            reason: "sample grids differ".into(),
        });
    }
    let mut max_position_error: f64 = 0.0;
    let mut max_velocity_error: f64 = 0.0;
    for (a, b) in ham.samples.iter().zip(&dual.samples) {
        for i in 0..d {
            max_position_error = max_position_error.max((a.x[i] - b.x[i]).abs());
            max_velocity_error = max_velocity_error.max((a.v[i] - b.v[i]).abs());
        }
    }
    Ok(EquivalenceReport {
        shell,
        max_position_error,
        max_velocity_error,
        samples: ham.len(),
        hamilton: ham,
        dual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit() -> ParticleParams {
        ParticleParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn harmonic(dim: usize, axes: Vec<usize>) -> Arc<dyn ScalarField> {
        Arc::new(Quadratic { dim, k: 1.0, axes })
    }

    fn magnetic(dim: usize, b: [f64; 3]) -> Gauge {
        Gauge::new(
            Arc::new(ZeroScalar { dim }),
            Arc::new(AffineVector::uniform_magnetic(dim, b)),
        )
        .unwrap()
    }

    #[test]
    fn hamilton_rhs_examples() {
        let free = FlatHamiltonian::new(unit(), None, Gauge::zero(3)).unwrap();
        let d = hamilton_rhs(&free, &PhaseState::new(vec![0.0; 3], vec![1.0, 0.0, 0.0], 0.0)).unwrap();
        assert_eq!(d.x, vec![1.0, 0.0, 0.0]);
        assert_eq!(d.p, vec![0.0; 3]);

        let osc = FlatHamiltonian::new(unit(), Some(harmonic(3, vec![0, 1, 2])), Gauge::zero(3)).unwrap();
        let d = hamilton_rhs(&osc, &PhaseState::new(vec![1.0, 0.0, 0.0], vec![0.0; 3], 0.0)).unwrap();
        assert_eq!(d.p, vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn gutzwiller_velocity_half_eta() {
        let mut lower = vec![0.0; 16];
        for (i, s) in signature(4).into_iter().enumerate() {
            lower[i * 4 + i] = 0.5 * s;
        }
        let metric = ExtendedMetric::pure(Arc::new(ConstantMetric::new(4, lower).unwrap()));
        let gz = GutzwillerHamiltonian {
            params: unit(),
            metric,
        };
        let u = gz.lowered_velocity(&[0.0; 4], &[0.0, 2.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(u, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn tangent_map_examples() {
        let flat = ExtendedMetric::pure(Arc::new(ConstantMetric::flat(3)));
        let st = GeodesicState::new(vec![0.0; 3], vec![0.3, -1.0, 2.0], 0.0);
        assert_eq!(tangent_map(&flat, &st).unwrap(), st.v_low);
        let two = ExtendedMetric::pure(Arc::new(
            ConstantMetric::new(3, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]).unwrap(),
        ));
        let st = GeodesicState::new(vec![0.0; 3], vec![1.0, 0.0, 0.0], 0.0);
        assert_eq!(tangent_map(&two, &st).unwrap(), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn tangent_map_round_trip_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let b: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut g = linalg::mat_mul(3, &b, &{
                let mut t = vec![0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        t[i * 3 + j] = b[j * 3 + i];
                    }
                }
                t
            });
            for i in 0..3 {
                g[i * 3 + i] += 0.5;
            }
            let metric = ExtendedMetric::pure(Arc::new(ConstantMetric::new(3, g.clone()).unwrap()));
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let up = tangent_map(&metric, &GeodesicState::new(vec![0.0; 3], v.clone(), 0.0)).unwrap();
            let back = linalg::mat_vec(3, &g, &up);
            assert!(linalg::max_abs_diff(&back, &v) < 1e-12);
        }
    }

    #[test]
    fn dual_rhs_flat_and_magnetic() {
        let flat = ExtendedMetric::pure(Arc::new(ConstantMetric::flat(3)));
        let d = geodesic_rhs_dual(&flat, &GeodesicState::new(vec![0.1; 3], vec![1.0, 0.0, 0.0], 0.0)).unwrap();
        assert_eq!(d.v_low, vec![0.0; 3]);

        // B = 2 z: du = (e/m) v x B = (2 u_y, -2 u_x, 0)
        let m = extend_metric(
            Arc::new(ConstantMetric::flat(3)),
            Some(Arc::new(AffineVector::uniform_magnetic(3, [0.0, 0.0, 2.0]))),
            &unit(),
            0.0,
        )
        .unwrap();
        let u = [0.3, -0.4, 0.7];
        let d = geodesic_rhs_dual(&m, &GeodesicState::new(vec![0.2, 0.1, 0.0], u.to_vec(), 0.0)).unwrap();
        assert!(linalg::max_abs_diff(&d.v_low, &[2.0 * u[1], -2.0 * u[0], 0.0]) < 1e-15);
        let raw = raw_dual_acceleration(&m, &[0.2, 0.1, 0.0], &u, 0.0).unwrap();
        assert!(linalg::max_abs_diff(&d.v_low, &raw) < 1e-15);
    }

    #[test]
    fn cyclotron_orbit() {
        let h = FlatHamiltonian::new(unit(), None, magnetic(3, [0.0, 0.0, 1.0])).unwrap();
        let x0 = vec![0.0; 3];
        let p0 = h.momentum_from_velocity(&x0, &[1.0, 0.0, 0.0], 0.0);
        let cfg = IntegratorConfig::default().with_grid(PI / 8.0);
        let tr = integrate(&|s, y: &[f64]| h.rhs(s, y), 0.0, &PhaseState::new(x0, p0, 0.0).to_vec(), 2.0 * PI, &cfg, |s, y| h.diagnostics(s, y)).unwrap();
        // centre at (0, -1): clockwise circle of radius 1
        for smp in &tr.samples {
            let r = (smp.x[0].powi(2) + (smp.x[1] + 1.0).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-9);
        }
        let last = tr.last();
        assert!(last.x.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn uniform_e_field_is_quadratic() {
        let gauge = Gauge::new(
            Arc::new(Affine {
                dim: 3,
                coeffs: vec![0.5, 0.0, 0.0, 0.0],
                offset: 0.0,
            }),
            Arc::new(AffineVector::zero(3)),
        )
        .unwrap();
        let h = FlatHamiltonian::new(unit(), None, gauge).unwrap();
        let cfg = IntegratorConfig::default().with_grid(0.5);
        let tr = integrate(&|s, y: &[f64]| h.rhs(s, y), 0.0, &[0.0; 6], 3.0, &cfg, |s, y| h.diagnostics(s, y)).unwrap();
        for smp in &tr.samples {
            assert!((smp.x[0] - 0.25 * smp.s * smp.s).abs() < 1e-10);
        }
    }

    #[test]
    fn crossed_fields_drift() {
        let (eps, b) = (0.1, 1.0);
        let gauge = Gauge::new(
            Arc::new(Affine {
                dim: 3,
                coeffs: vec![eps, 0.0, 0.0, 0.0],
                offset: 0.0,
            }),
            Arc::new(AffineVector::uniform_magnetic(3, [0.0, 0.0, b])),
        )
        .unwrap();
        let h = FlatHamiltonian::new(unit(), None, gauge.clone()).unwrap();
        let span = 20.0 * PI;
        let x0 = vec![0.0; 3];
        let p0 = h.momentum_from_velocity(&x0, &[0.0, 0.0, 0.0], 0.0);
        let tr = integrate(&|s, y: &[f64]| h.rhs(s, y), 0.0, &PhaseState::new(x0.clone(), p0, 0.0).to_vec(), span, &IntegratorConfig::default().with_grid(2.0 * PI), |s, y| h.diagnostics(s, y)).unwrap();
        // after whole cyclotron periods the guiding centre has moved by the drift
        let last = tr.last();
        assert!((last.x[1] / span + eps / b).abs() < 1e-8, "{:?}", last.x);
        assert!(last.x[0].abs() < 1e-8);

        // Lorentz reference integrated directly agrees with the Hamilton flow
        let p = unit();
        let lorentz = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
            let mut out = y[3..].to_vec();
            out.extend(lorentz_reference(&p, &gauge, &y[..3], &y[3..], s)?);
            Ok(out)
        };
        let sol = integrate::solve(&lorentz, 0.0, &[0.0; 6], span, &IntegratorConfig::default()).unwrap();
        let yl = sol.y.last().unwrap();
        assert!(linalg::max_abs_diff(&yl[..3], &last.x) < 1e-7);
    }

    #[test]
    fn rk4_matches_adaptive_on_cyclotron() {
        let h = FlatHamiltonian::new(unit(), None, magnetic(3, [0.0, 0.0, 1.0])).unwrap();
        let y0 = PhaseState::new(vec![0.0; 3], h.momentum_from_velocity(&[0.0; 3], &[1.0, 0.0, 0.2], 0.0), 0.0).to_vec();
        let rhs = |s, y: &[f64]| h.rhs(s, y);
        let a = integrate::solve(&rhs, 0.0, &y0, 2.0 * PI, &IntegratorConfig::rk4(1e-3).with_grid(PI / 4.0)).unwrap();
        let b = integrate::solve(&rhs, 0.0, &y0, 2.0 * PI, &IntegratorConfig::default().with_grid(PI / 4.0)).unwrap();
        for (ya, yb) in a.y.iter().zip(&b.y) {
            assert!(linalg::max_abs_diff(ya, yb) < 1e-7);
        }
    }

    #[test]
    fn gutzwiller_flow_matches_dual_geodesic() {
        let h = FlatHamiltonian::new(unit(), Some(harmonic(3, vec![0, 1, 2])), magnetic(3, [0.0, 0.3, 1.0])).unwrap();
        let x = [0.4, -0.2, 0.3];
        let p = [0.1, 0.5, -0.3];
        let shell = h.value(&x, &p, 0.0);
        let metric = h.dual_metric(shell).unwrap();
        let gz = GutzwillerHamiltonian { params: unit(), metric: metric.clone() };
        let mut y = x.to_vec();
        y.extend_from_slice(&p);
        let dh = gz.rhs(0.0, &y).unwrap();
        let u = gz.lowered_velocity(&x, &p, 0.0).unwrap();
        let mut yd = x.to_vec();
        yd.extend_from_slice(&u);
        let dd = dual_rhs(&metric, 0.0, &yd, None).unwrap();
        assert!(linalg::max_abs_diff(&dh[..3], &dd[..3]) < 1e-14);
        // d/ds u = d/ds (g pi / m) along the Gutzwiller flow
        let eps = 1e-6;
        let yp: Vec<f64> = y.iter().zip(&dh).map(|(a, b)| a + eps * b).collect();
        let ym: Vec<f64> = y.iter().zip(&dh).map(|(a, b)| a - eps * b).collect();
        let up = gz.lowered_velocity(&yp[..3], &yp[3..], 0.0).unwrap();
        let um = gz.lowered_velocity(&ym[..3], &ym[3..], 0.0).unwrap();
        for i in 0..3 {
            assert!(((up[i] - um[i]) / (2.0 * eps) - dd[3 + i]).abs() < 1e-7);
        }
    }

    #[test]
    fn m_form_flow_gives_potential_force() {
        let p = ParticleParams::new(1.0, 0.0, 1.0).unwrap();
        let v = harmonic(4, vec![1]);
        let h = FlatHamiltonian::new(p, Some(v), Gauge::zero(4)).unwrap();
        let x = [0.0, 1.0, 0.0, 0.0];
        let vel = [1.3, 0.2, -0.1, 0.4];
        let mom = h.momentum_from_velocity(&x, &vel, 0.0);
        let shell = h.value(&x, &mom, 0.0);
        let metric = h.dual_metric(shell).unwrap();
        let a = geodesic_mapped(&metric, &x, &vel, 0.0).unwrap();
        assert!((a[1] + 1.0).abs() < 1e-8);
        for i in [0, 2, 3] {
            assert!(a[i].abs() < 1e-12);
        }
        let flat = ExtendedMetric::pure(Arc::new(ConstantMetric::flat(4)));
        assert!(geodesic_mapped(&flat, &x, &vel, 0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_matches_chain_rule_for_static_fields() {
        let gauge = Gauge::new(
            Arc::new(InverseRadius { dim: 3, strength: 0.3, axes: vec![0, 1, 2], softening: 0.5 }),
            Arc::new(AffineVector::uniform_magnetic(3, [0.2, -0.4, 1.0])),
        )
        .unwrap();
        let p = ParticleParams::new(1.5, 0.8, 1.0).unwrap();
        let h = FlatHamiltonian::new(p, None, gauge.clone()).unwrap();
        let x = [0.3, 0.5, -0.2];
        let v = [0.7, -0.3, 0.4];
        let shell = h.value(&x, &h.momentum_from_velocity(&x, &v, 0.0), 0.0);
        let metric = h.dual_metric(shell).unwrap();
        let a = mapped_acceleration(&p, &metric, &gauge, &x, &v, 0.0).unwrap();
        let b = mapped_acceleration_chain(&metric, &x, &v, 0.0, None).unwrap();
        let l = lorentz_reference(&p, &gauge, &x, &v, 0.0).unwrap();
        assert!(linalg::max_abs_diff(&a, &l) < 1e-12);
        assert!(linalg::max_abs_diff(&b, &l) < 1e-12);
        let c = mapped_acceleration_chain(&metric, &x, &v, 0.0, Some(Fault::FlipGamma4)).unwrap();
        assert!(linalg::max_abs_diff(&c, &l) > 1e-3);
    }

    #[test]
    fn oscillator_equivalence_short() {
        let h = FlatHamiltonian::new(unit(), Some(harmonic(3, vec![0, 1, 2])), Gauge::zero(3)).unwrap();
        let st = PhaseState::new(vec![1.2, 0.0, 0.0], vec![0.0, 0.6, 0.2f64.sqrt()], 0.0);
        let rep = dual_equivalence(&h, &st, 2.0 * PI, &IntegratorConfig::default()).unwrap();
        assert!((rep.shell - 1.0).abs() < 1e-12);
        assert!(rep.max_position_error < 1e-7, "{}", rep.max_position_error);
    }

    #[test]
    fn trajectory_csv_header() {
        let h = FlatHamiltonian::new(unit(), None, Gauge::zero(3)).unwrap();
        let tr = integrate(&|s, y: &[f64]| h.rhs(s, y), 0.0, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1.0, &IntegratorConfig::rk4(0.5), |s, y| h.diagnostics(s, y)).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "s,x0,x1,x2,v0,v1,v2,K,mp2");
        assert!(lines.next().unwrap().ends_with(','));
        assert_eq!(csv.lines().count(), 4);
    }
}
