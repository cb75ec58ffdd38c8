//! Conservation diagnostics for the covariant flow: the value of `K`, the
//! dynamical mass `m_p^2`, the mass-exchange balance and the condition under
//! which the Gutzwiller-form `K` is conserved.

use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{PhaseState, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{
    extend_metric, signature, Affine, AffineVector, ConformalMetric, ExtendedMetric, Gauge,
    ParticleParams, ScalarField,
};
use crate::linalg;

/// Which expression of `K` to evaluate.
#[derive(Clone, Copy)]
pub enum KForm<'a> {
    /// `(m/2) eta xdot xdot - e a_5`
    Hamilton(&'a dyn ScalarField),
    /// `(m/2) g_{mu nu} xdot^mu xdot^nu` with raised velocities.
    Gutzwiller(&'a ExtendedMetric),
}

/// `K` at position `x`, raised velocity `v` and parameter `s`.
pub fn k_value(params: &ParticleParams, form: KForm<'_>, x: &[f64], v: &[f64], s: f64) -> Result<f64> {
    let m = params.mass;
    match form {
        KForm::Hamilton(a5) => {
            let sig = signature(x.len());
            let kin: f64 = v.iter().zip(&sig).map(|(v, g)| g * v * v).sum();
            Ok(0.5 * m * kin - params.charge * a5.value(x, s))
        }
        KForm::Gutzwiller(metric) => {
            let d = metric.dim();
            let g = metric.lower(x, s)?;
            Ok(0.5 * m * linalg::quad_form(d, &g, v, v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassSquared {
    pub value: f64,
    /// Spacelike kinetic momentum; legal off shell, only flagged.
    pub tachyonic: bool,
}

/// `m_p^2 = -eta_{mu nu} (p - e a)^mu (p - e a)^nu`
pub fn mass_squared(params: &ParticleParams, gauge: &Gauge, state: &PhaseState) -> MassSquared {
    let a = gauge.vector.value(&state.x, state.s);
    let sig = signature(state.x.len());
    let value = -(0..state.x.len())
        .map(|i| {
            let pi = state.p[i] - params.charge * a[i];
            sig[i] * pi * pi
        })
        .sum::<f64>();
    MassSquared {
        value,
        tachyonic: value < 0.0,
    }
}

/// Fourth-order finite-difference derivative on a uniform grid; one-sided
/// five-point stencils at the two ends on each side.
pub fn fd4_derivative(s: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let n = s.len();
    if n < 5 || v.len() != n {
        return Err(Error::TooFewSamples {
            needed: 5,
            have: n.min(v.len()),
        });
    }
    let h = (s[n - 1] - s[0]) / (n - 1) as f64;
    let deviation = s
        .windows(2)
        .map(|w| ((w[1] - w[0]) - h).abs() / h)
        .fold(0.0, f64::max);
    if deviation > 1e-6 {
        return Err(Error::NonUniformSampling { deviation });
    }
    let mut d = vec![0.0; n];
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h)
        } else if i < 2 {
            let w = &v[i..];
            if i == 0 {
                (-25.0 * w[0] + 48.0 * w[1] - 36.0 * w[2] + 16.0 * w[3] - 3.0 * w[4]) / (12.0 * h)
            } else {
                (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h)
            }
        } else if i == n - 1 {
            let w = &v[n - 5..];
            (3.0 * w[0] - 16.0 * w[1] + 36.0 * w[2] - 48.0 * w[3] + 25.0 * w[4]) / (12.0 * h)
        } else {
            let w = &v[n - 5..];
            (-w[0] + 6.0 * w[1] - 18.0 * w[2] + 10.0 * w[3] + 3.0 * w[4]) / (12.0 * h)
        };
    }
    Ok(d)
}

/// Balance terms along a sampled relativistic trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceCurve {
    pub s: Vec<f64>,
    /// `e da5/dtau + (1/2m) d(m_p^2)/dtau` (with `-dU/dtau` replacing
    /// `e da5/dtau` for a general effective potential)
    pub residual: Vec<f64>,
    pub dk_ds: Vec<f64>,
}

impl BalanceCurve {
    /// `max |dK/dtau + residual|`: the decomposition `dK = -(1/2m) dm_p^2 - e da5`.
    /// Only meaningful when `K` carries no potential besides `-e a5`.
    pub fn decomposition_error(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.dk_ds)
            .map(|(r, k)| (r + k).abs())
            .fold(0.0, f64::max)
    }
}

/// Mass-exchange balance from the trajectory's own samples, for a pure
/// gauge scalar `a5`.
pub fn mass_balance_residual(params: &ParticleParams, a5: &dyn ScalarField, traj: &Trajectory) -> Result<BalanceCurve> {
    let s: Vec<f64> = traj.samples.iter().map(|p| p.s).collect();
    let u: Vec<f64> = traj
        .samples
        .iter()
        .map(|p| -params.charge * a5.value(&p.x, p.s))
        .collect();
    balance_from_potential_samples(params, &s, &u, traj)
}

/// Same balance with a general effective potential `U = V - e a5`:
/// residual `= (1/2m) d(m_p^2)/dtau - dU/dtau`.
pub fn mass_balance_residual_with_potential(
    params: &ParticleParams,
    potential: &dyn ScalarField,
    traj: &Trajectory,
) -> Result<BalanceCurve> {
    let s: Vec<f64> = traj.samples.iter().map(|p| p.s).collect();
    let u: Vec<f64> = traj.samples.iter().map(|p| potential.value(&p.x, p.s)).collect();
    balance_from_potential_samples(params, &s, &u, traj)
}

fn balance_from_potential_samples(params: &ParticleParams, s: &[f64], u: &[f64], traj: &Trajectory) -> Result<BalanceCurve> {
    let mp2: Vec<f64> = traj
        .samples
        .iter()
        .map(|p| p.mp2.ok_or_else(|| Error::InvalidParameter("trajectory carries no m_p^2".into())))
        .collect::<Result<_>>()?;
    let k: Vec<f64> = traj.samples.iter().map(|p| p.k).collect();
    let du = fd4_derivative(s, u)?;
    let dm = fd4_derivative(s, &mp2)?;
    let dk_ds = fd4_derivative(s, &k)?;
    let residual = du
        .iter()
        .zip(&dm)
        .map(|(du, dm)| dm / (2.0 * params.mass) - du)
        .collect();
    Ok(BalanceCurve {
        s: s.to_vec(),
        residual,
        dk_ds,
    })
}

/// `-1/2 dg^{mu nu}/dtau u_mu u_nu - (e/m) da^mu/dtau u_mu` for a lowered velocity `u`.
pub fn gutzwiller_condition_residual(metric: &ExtendedMetric, x: &[f64], u: &[f64], s: f64) -> Result<f64> {
    let d = metric.dim();
    let jet = metric.jet(x, s)?;
    let mut r = 0.0;
    for mu in 0..d {
        for nu in 0..d {
            r -= 0.5 * jet.d_ext_at(d, mu, nu) * u[mu] * u[nu];
        }
        r -= jet.d_ext_at(d, mu, d) * u[mu];
    }
    Ok(r)
}

/// Metric `g^{mu nu} = (1 + c (tau - tau0)) eta^{mu nu}` with gauge `a = b tau`,
/// where `c` is solved so the conservation condition holds at `(x, u, tau0)`.
pub fn compensating_pair(params: &ParticleParams, b: &[f64], u: &[f64], tau0: f64) -> Result<ExtendedMetric> {
    let d = b.len();
    let sig = signature(d);
    let norm: f64 = u.iter().zip(&sig).map(|(u, g)| g * u * u).sum();
    if norm.abs() < 1e-12 {
        return Err(Error::InvalidParameter("velocity is null; no compensating metric".into()));
    }
    let bu: f64 = b.iter().zip(u).map(|(b, u)| b * u).sum();
    let c = -2.0 * params.charge_ratio() * bu / norm;
    let mut coeffs = vec![0.0; d + 1];
    coeffs[d] = -c;
    let potential: Arc<dyn ScalarField> = Arc::new(Affine {
        dim: d,
        coeffs,
        offset: c * tau0,
    });
    let base = ConformalMetric::new(1.0, potential)?;
    let mut gauge = AffineVector::zero(d);
    for (i, bi) in b.iter().enumerate() {
        gauge.matrix[i * (d + 1) + d] = *bi;
    }
    extend_metric(Arc::new(base), Some(Arc::new(gauge)), params, 0.0)
}

/// Summary written by the conservation analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct ConservationReport {
    pub K0: f64,
    pub max_dK_rel: f64,
    pub max_balance_residual: f64,
    pub max_condition_residual: f64,
    pub conserved: bool,
}

/// Builds the report for a trajectory of the flat covariant Hamiltonian
/// with effective potential `potential` (`V - e a5`).
///
/// `condition` supplies the Gutzwiller metric and lowered velocity per sample
/// when available. `threshold` is relative to `|K0|`.
pub fn conservation_report(
    params: &ParticleParams,
    potential: &dyn ScalarField,
    traj: &Trajectory,
    condition: Option<&dyn Fn(f64, &[f64]) -> Result<f64>>,
    threshold: f64,
) -> Result<ConservationReport> {
    let k0 = traj.samples[0].k;
    let scale = k0.abs().max(f64::MIN_POSITIVE);
    let max_dk_rel = traj
        .samples
        .iter()
        .map(|p| (p.k - k0).abs() / scale)
        .fold(0.0, f64::max);
    let balance = mass_balance_residual_with_potential(params, potential, traj)?;
    let max_balance = balance.residual.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut max_condition: f64 = 0.0;
    if let Some(cond) = condition {
        for p in &traj.samples {
            max_condition = max_condition.max(cond(p.s, &p.state)?.abs());
        }
    }
    let tol = threshold * k0.abs().max(1.0);
    Ok(ConservationReport {
        K0: k0,
        max_dK_rel: max_dk_rel,
        max_balance_residual: max_balance,
        max_condition_residual: max_condition,
        conserved: max_dk_rel <= threshold && max_balance <= tol && max_condition <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, FlatHamiltonian, GutzwillerHamiltonian, SampleDiagnostics};
    use crate::fields::*;
    use crate::integrate::IntegratorConfig;

    fn unit() -> ParticleParams {
        ParticleParams::new(1.0, 1.0, -0.5).unwrap()
    }

    fn const_a5(v: f64) -> Affine {
        Affine {
            dim: 4,
            coeffs: vec![0.0; 5],
            offset: v,
        }
    }

    #[test]
    fn k_value_examples() {
        let v = [1.0, 0.0, 0.0, 0.0];
        let k = k_value(&unit(), KForm::Hamilton(&const_a5(0.0)), &[0.0; 4], &v, 0.0).unwrap();
        assert_eq!(k, -0.5);
        let k = k_value(&unit(), KForm::Hamilton(&const_a5(0.25)), &[0.0; 4], &v, 0.0).unwrap();
        assert_eq!(k, -0.75);
        let flat = ExtendedMetric::pure(Arc::new(ConstantMetric::flat(4)));
        for v in [[1.0, 0.3, -0.2, 0.5], [0.2, 1.0, 0.1, 0.0]] {
            let a = k_value(&unit(), KForm::Hamilton(&const_a5(0.0)), &[0.1; 4], &v, 0.0).unwrap();
            let b = k_value(&unit(), KForm::Gutzwiller(&flat), &[0.1; 4], &v, 0.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mass_squared_examples() {
        let g = Gauge::zero(4);
        let m = mass_squared(&unit(), &g, &PhaseState::new(vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0], 0.0));
        assert_eq!(m.value, 1.0);
        assert!(!m.tachyonic);
        let m = mass_squared(&unit(), &g, &PhaseState::new(vec![0.0; 4], vec![0.0, 1.0, 0.0, 0.0], 0.0));
        assert_eq!(m.value, -1.0);
        assert!(m.tachyonic);
    }

    #[test]
    fn fd4_is_fourth_order() {
        let err = |n: usize| {
            let s: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
            let v: Vec<f64> = s.iter().map(|x| x.sin()).collect();
            let d = fd4_derivative(&s, &v).unwrap();
            s.iter().zip(d).map(|(x, d)| (d - x.cos()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(41) / err(81);
        assert!(ratio > 12.0, "{ratio}");
        assert!(fd4_derivative(&[0.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(matches!(
            fd4_derivative(&[0.0, 1.0, 2.0, 3.5, 4.0], &[0.0; 5]),
            Err(Error::NonUniformSampling { .. })
        ));
    }

    fn run(h: &FlatHamiltonian, x: Vec<f64>, v: Vec<f64>, span: f64) -> Trajectory {
        let p = h.momentum_from_velocity(&x, &v, 0.0);
        integrate(
            &|s, y: &[f64]| h.rhs(s, y),
            0.0,
            &PhaseState::new(x, p, 0.0).to_vec(),
            span,
            &IntegratorConfig::default().with_grid(0.01),
            |s, y| h.diagnostics(s, y),
        )
        .unwrap()
    }

    #[test]
    fn free_particle_balance_vanishes() {
        let h = FlatHamiltonian::new(unit(), None, Gauge::zero(4)).unwrap();
        let tr = run(&h, vec![0.0; 4], vec![1.2, 0.3, 0.0, 0.1], 2.0);
        let b = mass_balance_residual(&unit(), &const_a5(0.0), &tr).unwrap();
        assert!(b.residual.iter().chain(&b.dk_ds).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn static_magnetic_mass_constant() {
        let g = Gauge::new(
            Arc::new(ZeroScalar { dim: 4 }),
            Arc::new(AffineVector::uniform_magnetic(4, [0.0, 0.0, 1.5])),
        )
        .unwrap();
        let h = FlatHamiltonian::new(unit(), None, g).unwrap();
        let tr = run(&h, vec![0.0; 4], vec![1.3, 0.4, -0.2, 0.1], 5.0);
        let m0 = tr.samples[0].mp2.unwrap();
        assert!(tr.samples.iter().all(|p| (p.mp2.unwrap() - m0).abs() < 1e-9));
        let b = mass_balance_residual(&unit(), &ZeroScalar { dim: 4 }, &tr).unwrap();
        assert!(b.residual.iter().chain(&b.dk_ds).all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn tau_linear_a5_decomposition() {
        let a5 = Arc::new(Affine {
            dim: 4,
            coeffs: vec![0.0, 0.2, 0.0, 0.0, 0.3],
            offset: 0.0,
        });
        let g = Gauge::new(a5.clone(), Arc::new(AffineVector::zero(4))).unwrap();
        let h = FlatHamiltonian::new(unit(), None, g).unwrap();
        let tr = run(&h, vec![0.0, 0.5, 0.0, 0.0], vec![1.5, 0.2, 0.0, 0.0], 3.0);
        let b = mass_balance_residual(&unit(), a5.as_ref(), &tr).unwrap();
        assert!(b.decomposition_error() < 1e-6, "{}", b.decomposition_error());
        // K really changes here
        assert!(b.dk_ds.iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn condition_residual_cases() {
        let p = unit();
        let u = [1.2, 0.3, -0.4, 0.2];
        let flat = ExtendedMetric::pure(Arc::new(ConstantMetric::flat(4)));
        assert_eq!(gutzwiller_condition_residual(&flat, &[0.1; 4], &u, 0.3).unwrap(), 0.0);

        let b = [0.2, -0.1, 0.5, 0.3];
        let mut gauge = AffineVector::zero(4);
        for i in 0..4 {
            gauge.matrix[i * 5 + 4] = b[i];
        }
        let m = extend_metric(Arc::new(ConstantMetric::flat(4)), Some(Arc::new(gauge)), &p, 0.0).unwrap();
        let r = gutzwiller_condition_residual(&m, &[0.1; 4], &u, 0.3).unwrap();
        let expect: f64 = -p.charge_ratio() * b.iter().zip(&u).map(|(b, u)| b * u).sum::<f64>();
        assert!((r - expect).abs() < 1e-12);

        let pair = compensating_pair(&p, &b, &u, 0.3).unwrap();
        let r = gutzwiller_condition_residual(&pair, &[0.1; 4], &u, 0.3).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn dk_equals_m_times_condition_along_gutzwiller_flow() {
        let p = unit();
        let b = [0.2, -0.1, 0.5, 0.3];
        let mut gauge = AffineVector::zero(4);
        for i in 0..4 {
            gauge.matrix[i * 5 + 4] = b[i];
        }
        let pot: Arc<dyn ScalarField> = Arc::new(Affine {
            dim: 4,
            coeffs: vec![0.0, 0.1, 0.0, 0.0, -0.2],
            offset: 0.0,
        });
        let metric = extend_metric(
            Arc::new(ConformalMetric::new(1.0, pot).unwrap()),
            Some(Arc::new(gauge)),
            &p,
            0.0,
        )
        .unwrap();
        let gz = GutzwillerHamiltonian { params: p, metric: metric.clone() };
        let y0 = [0.0, 0.1, 0.0, 0.0, 1.2, 0.3, 0.1, -0.2];
        let tr = integrate(
            &|s, y: &[f64]| gz.rhs(s, y),
            0.0,
            &y0,
            1.0,
            &IntegratorConfig::default().with_grid(0.005),
            |s, y| {
                Ok(SampleDiagnostics {
                    x: y[..4].to_vec(),
                    v: vec![0.0; 4],
                    k: gz.value(&y[..4], &y[4..], s)?,
                    mp2: None,
                })
            },
        )
        .unwrap();
        let s: Vec<f64> = tr.samples.iter().map(|p| p.s).collect();
        let k: Vec<f64> = tr.samples.iter().map(|p| p.k).collect();
        let dk = fd4_derivative(&s, &k).unwrap();
        for (smp, dk) in tr.samples.iter().zip(dk) {
            let u = gz.lowered_velocity(&smp.state[..4], &smp.state[4..], smp.s).unwrap();
            let r = gutzwiller_condition_residual(&metric, &smp.state[..4], &u, smp.s).unwrap();
            assert!((dk - p.mass * r).abs() < 1e-7, "{dk} vs {r}");
        }
    }
}
