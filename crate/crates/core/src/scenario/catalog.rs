//! Field catalog and the objects a scenario is built from.

use std::sync::Arc;

use serde_json::{json, Value};

use super::config::{FieldSpec, InitialMomentum, Mode, ScenarioConfig};
use crate::dynamics::{FlatHamiltonian, GutzwillerHamiltonian, PhaseState};
use crate::error::{Error, Result};
use crate::fields::{
    Affine, AffineVector, ExtendedMetric, Gauge, InverseRadius, ParticleParams, PlaneWave, Quadratic, ScalarField,
    ScalarSum, VectorField, ZeroScalar,
};
use crate::geometry;

/// Prescribed background: potential `V` and gauge field (`phi` or `a5`, vector part).
#[derive(Clone)]
pub struct FieldSetup {
    pub potential: Option<Arc<dyn ScalarField>>,
    pub gauge: Gauge,
}

pub fn build_fields(mode: Mode, spec: &FieldSpec, confine: f64) -> Result<FieldSetup> {
    let d = mode.dim();
    let spatial = mode.spatial_axes();
    let mut scalar: Arc<dyn ScalarField> = Arc::new(ZeroScalar { dim: d });
    let mut vector: Arc<dyn VectorField> = Arc::new(AffineVector::zero(d));
    let mut potential: Option<Arc<dyn ScalarField>> = None;
    match spec {
        FieldSpec::Zero => {}
        FieldSpec::UniformE { e } => match mode {
            // phi = -E.r
            Mode::Nr => {
                let mut coeffs: Vec<f64> = e.iter().map(|v| -v).collect();
                coeffs.push(0.0);
                scalar = Arc::new(Affine { dim: 3, coeffs, offset: 0.0 });
            }
            // A^0 = -E.r
            Mode::Rel => {
                let mut a = AffineVector::zero(4);
                for (i, ei) in e.iter().enumerate() {
                    a.matrix[1 + i] = -ei;
                }
                vector = Arc::new(a);
            }
        },
        FieldSpec::UniformB { b } => vector = Arc::new(AffineVector::uniform_magnetic(d, *b)),
        FieldSpec::Coulomb { strength, softening } => {
            scalar = Arc::new(InverseRadius {
                dim: d,
                strength: *strength,
                axes: spatial.clone(),
                softening: *softening,
            })
        }
        FieldSpec::Harmonic { k, axes } => {
            potential = Some(Arc::new(Quadratic {
                dim: d,
                k: *k,
                axes: axes.clone(),
            }))
        }
        FieldSpec::PlaneWaveA5 {
            amplitude,
            wavevector,
            frequency,
            phase,
        } => {
            scalar = Arc::new(PlaneWave {
                dim: d,
                amplitude: *amplitude,
                wavevector: wavevector.clone(),
                frequency: *frequency,
                phase: *phase,
            })
        }
        FieldSpec::TauLinearA5 { gradient, rate, offset } => {
            let mut coeffs = gradient.clone();
            coeffs.push(*rate);
            scalar = Arc::new(Affine {
                dim: d,
                coeffs,
                offset: *offset,
            });
        }
    }
    if confine != 0.0 {
        let extra: Arc<dyn ScalarField> = Arc::new(Quadratic {
            dim: d,
            k: confine,
            axes: spatial,
        });
        potential = Some(match potential {
            None => extra,
            Some(v) => Arc::new(ScalarSum {
                dim: d,
                terms: vec![(1.0, v), (1.0, extra)],
            }),
        });
    }
    Ok(FieldSetup {
        potential,
        gauge: Gauge::new(scalar, vector)?,
    })
}

/// Flat Hamiltonian of the scenario; the shell value is filled in from the initial state.
pub fn hamiltonian(cfg: &ScenarioConfig) -> Result<FlatHamiltonian> {
    let setup = build_fields(cfg.mode, &cfg.field.spec, cfg.field.confine)?;
    let params = ParticleParams::new(cfg.particle.mass, cfg.particle.charge, 0.0)?;
    let mut h = FlatHamiltonian::new(params, setup.potential, setup.gauge)?;
    let st = initial_state(cfg, &h);
    h.params = h.params.with_shell(h.value(&st.x, &st.p, st.s));
    Ok(h)
}

pub fn initial_state(cfg: &ScenarioConfig, h: &FlatHamiltonian) -> PhaseState {
    let init = &cfg.initial;
    let p = match &init.momentum {
        InitialMomentum::Canonical(p) => p.clone(),
        InitialMomentum::Velocity(v) => h.momentum_from_velocity(&init.x, v, init.s),
    };
    PhaseState::new(init.x.clone(), p, init.s)
}

/// Dual metric on the scenario's shell together with the lowered initial velocity.
pub fn dual_setup(h: &FlatHamiltonian, st: &PhaseState) -> Result<(ExtendedMetric, Vec<f64>)> {
    let shell = h.value(&st.x, &st.p, st.s);
    let metric = h.dual_metric(shell)?;
    let gz = GutzwillerHamiltonian {
        params: h.params.with_shell(shell),
        metric: metric.clone(),
    };
    let u = gz.lowered_velocity(&st.x, &st.p, st.s)?;
    Ok((metric, u))
}

/// Metric, connection, curvature and M-form blocks at a point, as row-major JSON arrays.
pub fn inspect(cfg: &ScenarioConfig, x: &[f64], s: f64) -> Result<Value> {
    let d = cfg.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "inspection point",
            expected: d,
            got: x.len(),
        });
    }
    let h = hamiltonian(cfg)?;
    let st = initial_state(cfg, &h);
    let (metric, _) = dual_setup(&h, &st)?;
    let conn = geometry::connection(&metric, x, s)?;
    let curv = geometry::curvature(&metric, x, s)?;
    let mf = geometry::m_form(&metric, x, s)?;
    Ok(json!({
        "point": x,
        "s": s,
        "shell": h.params.shell,
        "metric": {
            "lower": metric.lower(x, s)?,
            "inverse": metric.inverse(x, s)?,
            "gauge_row": metric.gauge_row(x, s),
            "conformal_factor": metric.conformal_factor(x, s).transpose()?,
        },
        "connection": conn,
        "curvature": curv,
        "m_form": mf.m_form,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::field_strength;

    #[test]
    fn catalog_field_strengths() {
        let x = [0.3, -0.2, 0.5, 0.1];
        let e = build_fields(Mode::Rel, &FieldSpec::UniformE { e: [0.5, 0.0, 0.0] }, 0.0).unwrap();
        let f = field_strength(&e.gauge, &x, 0.0).unwrap();
        assert_eq!(f.get(0, 1), 0.5);
        assert_eq!(f.get(1, 0), -0.5);
        let b = build_fields(Mode::Rel, &FieldSpec::UniformB { b: [0.0, 0.0, 2.0] }, 0.0).unwrap();
        let f = field_strength(&b.gauge, &x, 0.0).unwrap();
        assert_eq!(f.get(1, 2), 2.0);
        assert!(b.gauge.is_static());
        let t = build_fields(
            Mode::Rel,
            &FieldSpec::TauLinearA5 {
                gradient: vec![0.0; 4],
                rate: 0.3,
                offset: 0.0,
            },
            1.0,
        )
        .unwrap();
        assert!(!t.gauge.is_static());
        assert!((t.potential.unwrap().value(&x, 0.0) - 0.15).abs() < 1e-15);
    }
}
