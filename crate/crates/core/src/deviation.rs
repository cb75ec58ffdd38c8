//! Geodesic deviation in the extended covariant form.
//!
//! The deviation `xi` (lower index) is carried together with its extended
//! covariant derivative `w = xi' + Gamma_i^{Al} U_A xi_l`, `U = (u, 1)`.
//! Then
//!
//! ```text
//! xi_i' = w_i - Gamma_i^{Al} U_A xi_l
//! w_i'  = R_i^{ACl} U_A U_C xi_l - Gamma_i^{Ab} U_A w_b
//! ```
//!
//! and no first-derivative term of `xi` survives in `D^2 xi = R U U xi`.
//! The base geodesic is integrated jointly with the deviation, so no
//! interpolation of the base orbit is needed.

use serde::Serialize;

use crate::dynamics::{dual_rhs, raw_dual_acceleration, GeodesicState};
use crate::error::{Error, Result};
use crate::fields::{signature, ExtendedMetric};
use crate::geometry::{self, ConnectionBlock, CurvatureBlock};
use crate::integrate::{self, IntegratorConfig};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationState {
    /// `xi_mu`, lower index.
    pub xi: Vec<f64>,
    /// Extended covariant derivative of `xi`.
    pub dxi: Vec<f64>,
}

/// `sum_A Gamma_i^{Al} U_A` as a `d x d` matrix `[i][l]`.
fn gamma_u(conn: &ConnectionBlock, u: &[f64], extended: bool) -> Vec<f64> {
    let d = conn.dim;
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for l in 0..d {
            let mut acc = if extended { conn.gamma4_at(i, l) } else { 0.0 };
            for a in 0..d {
                acc += conn.gamma_at(i, a, l) * u[a];
            }
            out[i * d + l] = acc;
        }
    }
    out
}

/// `xi' + Gamma^{jl} u_j xi_l`, plus `Gamma^{4l} xi_l` when `extended`.
pub fn covariant_deriv(
    conn: &ConnectionBlock,
    base: &GeodesicState,
    xi: &[f64],
    xi_dot: &[f64],
    extended: bool,
) -> Vec<f64> {
    let d = conn.dim;
    let gu = gamma_u(conn, &base.v_low, extended);
    let t = linalg::mat_vec(d, &gu, xi);
    xi_dot.iter().zip(t).map(|(a, b)| a + b).collect()
}

/// Second extended covariant derivative `R_i^{ACl} U_A U_C xi_l`.
pub fn deviation_rhs(curv: &CurvatureBlock, base: &GeodesicState, dev: &DeviationState) -> Vec<f64> {
    curv.contract(&base.v_low, &dev.xi)
}

/// Right-hand side of the joint system `[x, u, xi, w]`.
pub fn deviation_system_rhs(metric: &ExtendedMetric, s: f64, y: &[f64]) -> Result<Vec<f64>> {
    let d = metric.dim();
    let jet = metric.jet(&y[..d], s)?;
    let conn = geometry::connection_from_jet(&jet);
    let curv = geometry::curvature_from_jet(&jet);
    let (u, rest) = y[d..].split_at(d);
    let (xi, w) = rest.split_at(d);
    let sig = signature(d);
    let mut out: Vec<f64> = u.iter().zip(&sig).map(|(u, g)| g * u).collect();
    out.extend(conn.normal_form(u));
    let gu = gamma_u(&conn, u, true);
    let gxi = linalg::mat_vec(d, &gu, xi);
    out.extend(w.iter().zip(&gxi).map(|(a, b)| a - b));
    let r = curv.contract(u, xi);
    let gw = linalg::mat_vec(d, &gu, w);
    out.extend(r.iter().zip(&gw).map(|(a, b)| a - b));
    Ok(out)
}

/// Deviation data from a pair of nearby geodesic initial states.
pub fn initial_deviation(metric: &ExtendedMetric, base: &GeodesicState, other: &GeodesicState) -> Result<DeviationState> {
    let d = metric.dim();
    let sig = signature(d);
    let xi: Vec<f64> = (0..d).map(|i| sig[i] * (other.x[i] - base.x[i])).collect();
    let xi_dot: Vec<f64> = (0..d).map(|i| other.v_low[i] - base.v_low[i]).collect();
    let conn = geometry::connection(metric, &base.x, base.s)?;
    let dxi = covariant_deriv(&conn, base, &xi, &xi_dot, true);
    Ok(DeviationState { xi, dxi })
}

/// Sampled deviation along a base geodesic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationTrajectory {
    pub dim: usize,
    pub s: Vec<f64>,
    pub base: Vec<GeodesicState>,
    pub xi: Vec<Vec<f64>>,
    pub dxi: Vec<Vec<f64>>,
}

impl DeviationTrajectory {
    pub fn norms(&self) -> Vec<f64> {
        self.xi.iter().map(|v| linalg::norm(v)).collect()
    }

    /// CSV with header `s,xi0..,dxi0..,norm_xi`.
    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut out = String::from("s");
        for i in 0..d {
            out.push_str(&format!(",xi{i}"));
        }
        for i in 0..d {
            out.push_str(&format!(",dxi{i}"));
        }
        out.push_str(",norm_xi\n");
        for k in 0..self.s.len() {
            out.push_str(&format!("{:e}", self.s[k]));
            for v in self.xi[k].iter().chain(&self.dxi[k]) {
                out.push_str(&format!(",{v:e}"));
            }
            out.push_str(&format!(",{:e}\n", linalg::norm(&self.xi[k])));
        }
        out
    }
}

/// Integrates the base geodesic and its deviation together.
pub fn integrate_deviation(
    metric: &ExtendedMetric,
    base: &GeodesicState,
    dev: &DeviationState,
    span: f64,
    config: &IntegratorConfig,
) -> Result<DeviationTrajectory> {
    let d = metric.dim();
    let mut y0 = base.to_vec();
    y0.extend_from_slice(&dev.xi);
    y0.extend_from_slice(&dev.dxi);
    let sol = integrate::solve(&|s, y: &[f64]| deviation_system_rhs(metric, s, y), base.s, &y0, span, config)?;
    let mut out = DeviationTrajectory {
        dim: d,
        s: sol.s.clone(),
        base: Vec::with_capacity(sol.s.len()),
        xi: Vec::with_capacity(sol.s.len()),
        dxi: Vec::with_capacity(sol.s.len()),
    };
    for (s, y) in sol.s.iter().zip(&sol.y) {
        out.base.push(GeodesicState::from_slice(*s, &y[..2 * d]));
        out.xi.push(y[2 * d..3 * d].to_vec());
        out.dxi.push(y[3 * d..].to_vec());
    }
    Ok(out)
}

/// Mismatch between an offset geodesic pair and the linearized deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub xi0_norm: f64,
    pub s: Vec<f64>,
    pub mismatch: Vec<f64>,
    pub max_mismatch: f64,
}

/// Integrates a base geodesic, a second geodesic displaced by `offset`
/// (position offset, then lowered-velocity offset; `2d` entries) and the
/// Jacobi deviation seeded from the same offset, and reports
/// `|eta (y - x) - xi|` over the span.
pub fn pairwise_oracle(
    metric: &ExtendedMetric,
    base: &GeodesicState,
    offset: &[f64],
    span: f64,
    config: &IntegratorConfig,
) -> Result<OracleReport> {
    let d = metric.dim();
    if offset.len() != 2 * d {
        return Err(Error::DimensionMismatch {
            what: "oracle offset (position and velocity)",
            expected: 2 * d,
            got: offset.len(),
        });
    }
    let sig = signature(d);
    let other = GeodesicState::new(
        (0..d).map(|i| base.x[i] + offset[i]).collect(),
        (0..d).map(|i| base.v_low[i] + offset[d + i]).collect(),
        base.s,
    );
    let dev = initial_deviation(metric, base, &other)?;
    // [x, u, dx, du, xi, w]; the displaced orbit is carried as a difference
    let mut y0 = base.to_vec();
    y0.extend_from_slice(offset);
    y0.extend_from_slice(&dev.xi);
    y0.extend_from_slice(&dev.dxi);
    let rhs = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
        let mut main = y[..2 * d].to_vec();
        main.extend_from_slice(&y[4 * d..]);
        let fm = deviation_system_rhs(metric, s, &main)?;
        let shifted: Vec<f64> = (0..2 * d).map(|k| y[k] + y[2 * d + k]).collect();
        let fo = dual_rhs(metric, s, &shifted, None)?;
        let mut out = fm[..2 * d].to_vec();
        out.extend((0..2 * d).map(|k| fo[k] - fm[k]));
        out.extend_from_slice(&fm[2 * d..]);
        Ok(out)
    };
    let sol = integrate::solve(&rhs, base.s, &y0, span, config)?;
    let mismatch: Vec<f64> = sol
        .y
        .iter()
        .map(|y| {
            let diff: Vec<f64> = (0..d).map(|i| sig[i] * y[2 * d + i] - y[4 * d + i]).collect();
            linalg::norm(&diff)
        })
        .collect();
    let max_mismatch = mismatch.iter().cloned().fold(0.0, f64::max);
    Ok(OracleReport {
        xi0_norm: linalg::norm(&dev.xi).max(linalg::norm(&offset[d..])),
        s: sol.s,
        mismatch,
        max_mismatch,
    })
}

/// Largest leftover coefficient on `xi'` in the deviation equation once the
/// raw linearization is rewritten with the extended derivative.
///
/// The raw coefficient is the `u`-Jacobian of the Hamilton-derived
/// acceleration, taken by a central difference with unit step (exact for a
/// quadratic in `u`); the extended derivative contributes `2 Gamma_i^{Ab} U_A`.
pub fn first_derivative_residual(metric: &ExtendedMetric, x: &[f64], u: &[f64], s: f64) -> Result<f64> {
    let d = metric.dim();
    let conn = geometry::connection(metric, x, s)?;
    let gu = gamma_u(&conn, u, true);
    let mut worst: f64 = 0.0;
    for b in 0..d {
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        up[b] += 1.0;
        um[b] -= 1.0;
        let fp = raw_dual_acceleration(metric, x, &up, s)?;
        let fm = raw_dual_acceleration(metric, x, &um, s)?;
        for i in 0..d {
            let raw = 0.5 * (fp[i] - fm[i]);
            let scale = raw.abs().max(1.0);
            worst = worst.max((raw + 2.0 * gu[i * d + b]).abs() / scale);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Bounded,
    Linear,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Least-squares slope of `ln |xi|` against `s`.
    pub exponent: f64,
    pub class: StabilityClass,
    /// RMS residual of the log-linear fit.
    pub fit_residual: f64,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

/// Growth exponent and a coarse classification of `|xi(s)|`.
///
/// Exponential when the last quarter peaks more than 1.5x above the third;
/// bounded when the second half peaks less than 1.5x above the first;
/// linear otherwise.
pub fn stability_indicator(s: &[f64], norms: &[f64]) -> Result<StabilityReport> {
    let n = s.len().min(norms.len());
    if n < 10 {
        return Err(Error::DegenerateTrajectory(format!(
            "need at least 10 samples, have {n}"
        )));
    }
    if norms[..n].iter().any(|v| !v.is_finite() || *v < f64::MIN_POSITIVE) {
        return Err(Error::DegenerateTrajectory(
            "deviation norm underflowed or is not finite".into(),
        ));
    }
    let logs: Vec<f64> = norms[..n].iter().map(|v| v.ln()).collect();
    let ms = s[..n].iter().sum::<f64>() / n as f64;
    let ml = logs.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        sxx += (s[k] - ms).powi(2);
        sxy += (s[k] - ms) * (logs[k] - ml);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateTrajectory("all samples share one s".into()));
    }
    let exponent = sxy / sxx;
    let fit_residual = ((0..n)
        .map(|k| (logs[k] - ml - exponent * (s[k] - ms)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    // split by parameter range, not by index
    let (s0, s1) = (s[0], s[n - 1]);
    let cut = |frac: f64| s[..n].partition_point(|&v| v < s0 + frac * (s1 - s0));
    let (q2, q3) = (cut(0.5), cut(0.75));
    if q2 == 0 || q3 <= q2 || q3 >= n {
        return Err(Error::DegenerateTrajectory("samples do not cover the span".into()));
    }
    let late = sup(&norms[q3..n]) / sup(&norms[q2..q3]);
    let halves = sup(&norms[q2..n]) / sup(&norms[..q2]);
    let class = if late > 1.5 {
        StabilityClass::Exponential
    } else if halves < 1.5 {
        StabilityClass::Bounded
    } else {
        StabilityClass::Linear
    };
    Ok(StabilityReport {
        exponent,
        class,
        fit_residual,
    })
}
