//! Explicit Runge-Kutta integration: classic fixed-step RK4 and the
//! Dormand-Prince 5(4) pair with PI step-size control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    /// Fixed step RK4.
    Rk4 { step: f64 },
    /// Adaptive Dormand-Prince 5(4).
    DormandPrince,
}

/// Which states are kept in the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every accepted step.
    EveryStep,
    /// Exactly on the grid `s0 + k * spacing`; steps are clipped to land on it.
    Grid(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub sampling: Sampling,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
            sampling: Sampling::EveryStep,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4 { step },
            ..Self::default()
        }
    }

    pub fn with_grid(mut self, spacing: f64) -> Self {
        self.sampling = Sampling::Grid(spacing);
        self
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if let Method::Rk4 { step } = self.method {
            if !(step > 0.0) || !step.is_finite() {
                return bad("rk4 step must be positive and finite");
            }
        }
        if let Sampling::Grid(h) = self.sampling {
            if !(h > 0.0) || !h.is_finite() {
                return bad("sampling grid spacing must be positive and finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub steps: usize,
    pub rejections: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub s: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub stats: Stats,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 5th minus 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        let w = h * c;
        for (o, ki) in out.iter_mut().zip(k.iter()) {
            *o += w * ki;
        }
    }
    out
}

struct Driver<'a, F> {
    rhs: &'a F,
    stats: Stats,
    last_good: (f64, Vec<f64>),
}

impl<F> Driver<'_, F>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    fn eval(&mut self, s: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.stats.rhs_evals += 1;
        match (self.rhs)(s, y) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(v),
            Ok(_) => Err(Error::StepFailure {
                s,
                reason: "right-hand side returned a non-finite value".into(),
            }),
            Err(e) => Err(Error::SingularityReached {
                s: self.last_good.0,
                state: self.last_good.1.clone(),
                source: Box::new(e),
            }),
        }
    }
}

/// Integrates `dy/ds = rhs(s, y)` from `s0` over `span > 0`.
pub fn solve<F>(rhs: &F, s0: f64, y0: &[f64], span: f64, cfg: &IntegratorConfig) -> Result<Solution>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::InvalidParameter(format!("span must be positive, got {span}")));
    }
    let mut drv = Driver {
        rhs,
        stats: Stats::default(),
        last_good: (s0, y0.to_vec()),
    };
    let s_end = s0 + span;
    let mut out_s = vec![s0];
    let mut out_y = vec![y0.to_vec()];

    // next grid target
    let grid = match cfg.sampling {
        Sampling::Grid(h) => Some(h),
        Sampling::EveryStep => None,
    };
    let mut grid_k: usize = 1;
    let grid_point = |k: usize| -> f64 {
        match grid {
            Some(h) => (s0 + k as f64 * h).min(s_end),
            None => s_end,
        }
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);

    let mut s = s0;
    let mut y = y0.to_vec();
    let mut k1 = drv.eval(s, &y)?;

    let (fixed, mut h) = match cfg.method {
        Method::Rk4 { step } => (true, step.min(cfg.max_step)),
        Method::DormandPrince => (false, initial_step(&y, &k1, cfg).min(cfg.max_step)),
    };
    let mut err_prev: f64 = 1e-4;

    while !close(s, s_end) && s < s_end {
        if drv.stats.steps + drv.stats.rejections >= cfg.max_steps {
            return Err(Error::StepFailure {
                s,
                reason: format!("exceeded max_steps = {}", cfg.max_steps),
            });
        }
        let target = grid_point(grid_k);
        let mut h_try = h.min(cfg.max_step);
        let mut hits_target = false;
        if s + h_try >= target || close(s + h_try, target) {
            h_try = target - s;
            hits_target = true;
        }
        if h_try <= 1e-14 * s.abs().max(1.0) {
            return Err(Error::StepFailure {
                s,
                reason: format!("step size underflow (h = {h_try:.3e})"),
            });
        }

        if fixed {
            let k2 = drv.eval(s + 0.5 * h_try, &axpy(&y, h_try, &[(0.5, &k1)]))?;
            let k3 = drv.eval(s + 0.5 * h_try, &axpy(&y, h_try, &[(0.5, &k2)]))?;
            let k4 = drv.eval(s + h_try, &axpy(&y, h_try, &[(1.0, &k3)]))?;
            let y_new = axpy(
                &y,
                h_try,
                &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
            );
            s = if hits_target { target } else { s + h_try };
            y = y_new;
            drv.last_good = (s, y.clone());
            k1 = drv.eval(s, &y)?;
            drv.stats.steps += 1;
        } else {
            let k2 = drv.eval(s + C2 * h_try, &axpy(&y, h_try, &[(A21, &k1)]))?;
            let k3 = drv.eval(s + C3 * h_try, &axpy(&y, h_try, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = drv.eval(
                s + C4 * h_try,
                &axpy(&y, h_try, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            )?;
            let k5 = drv.eval(
                s + C5 * h_try,
                &axpy(&y, h_try, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = drv.eval(
                s + h_try,
                &axpy(&y, h_try, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            )?;
            let y_new = axpy(&y, h_try, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = drv.eval(s + h_try, &y_new)?;
            let mut err = 0.0;
            for i in 0..y.len() {
                let e = h_try
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / y.len().max(1) as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::StepFailure {
                    s,
                    reason: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.17) * err_prev.powf(0.04)).clamp(0.2, 5.0)
                };
                err_prev = err.max(1e-4);
                s = if hits_target { target } else { s + h_try };
                y = y_new;
                k1 = k7;
                drv.last_good = (s, y.clone());
                drv.stats.steps += 1;
                // a step clipped to a grid point does not shrink the controller's step
                h = if hits_target { h.max(h_try * fac) } else { h_try * fac };
            } else {
                drv.stats.rejections += 1;
                h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                continue;
            }
        }

        let record = match grid {
            Some(_) => hits_target,
            None => true,
        };
        if record {
            out_s.push(s);
            out_y.push(y.clone());
            if hits_target {
                grid_k += 1;
            }
        }
    }
    Ok(Solution {
        s: out_s,
        y: out_y,
        stats: drv.stats,
    })
}

fn initial_step(y: &[f64], f: &[f64], cfg: &IntegratorConfig) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for (yi, fi) in y.iter().zip(f) {
        let sc = cfg.abs_tol + cfg.rel_tol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let n = y.len().max(1) as f64;
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.clamp(1e-8, 0.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_s: f64, y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![y[1], -y[0]])
    }

    #[test]
    fn free_particle_exact() {
        let rhs = |_s: f64, y: &[f64]| Ok(vec![y[3], y[4], y[5], 0.0, 0.0, 0.0]);
        let y0 = [0.1, -0.2, 0.3, 1.0, 2.0, -0.5];
        for cfg in [IntegratorConfig::default(), IntegratorConfig::rk4(0.01)] {
            let sol = solve(&rhs, 0.0, &y0, 1.0, &cfg).unwrap();
            let y = sol.y.last().unwrap();
            assert_eq!(*sol.s.last().unwrap(), 1.0);
            for i in 0..3 {
                assert!((y[i] - (y0[i] + y0[i + 3])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oscillator_period_returns() {
        let cfg = IntegratorConfig::default();
        let sol = solve(&oscillator, 0.0, &[1.0, 0.0], 2.0 * std::f64::consts::PI, &cfg).unwrap();
        let y = sol.y.last().unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
        assert!(sol.s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_sampling_hits_points() {
        let cfg = IntegratorConfig::default().with_grid(0.25);
        let sol = solve(&oscillator, 1.0, &[1.0, 0.0], 2.0, &cfg).unwrap();
        assert_eq!(sol.s.len(), 9);
        for (k, s) in sol.s.iter().enumerate() {
            assert!((s - (1.0 + 0.25 * k as f64)).abs() < 1e-12);
        }
        for (s, y) in sol.s.iter().zip(&sol.y) {
            assert!((y[0] - (s - 1.0).cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn rhs_error_becomes_singularity() {
        let rhs = |s: f64, y: &[f64]| {
            if s > 0.5 {
                Err(Error::SingularMetric)
            } else {
                Ok(vec![y[0]])
            }
        };
        let err = solve(&rhs, 0.0, &[1.0], 1.0, &IntegratorConfig::rk4(0.1)).unwrap_err();
        match err {
            Error::SingularityReached { s, state, source } => {
                assert!(s <= 0.5 && s > 0.3);
                assert_eq!(state.len(), 1);
                assert_eq!(*source, Error::SingularMetric);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = IntegratorConfig::default();
        cfg.rel_tol = 0.0;
        assert!(solve(&oscillator, 0.0, &[1.0, 0.0], 1.0, &cfg).is_err());
        assert!(solve(&oscillator, 0.0, &[1.0, 0.0], -1.0, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn max_steps_is_step_failure() {
        let mut cfg = IntegratorConfig::rk4(1e-3);
        cfg.max_steps = 10;
        assert!(matches!(
            solve(&oscillator, 0.0, &[1.0, 0.0], 1.0, &cfg),
            Err(Error::StepFailure { .. })
        ));
    }
}
