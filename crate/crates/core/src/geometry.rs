//! Connection and curvature blocks of the extended dual metric.
//!
//! Everything is derived from the extended inverse metric `G^{AB}`
//! (indices `0..=d`, slot `d` being the evolution parameter):
//!
//! ```text
//! Gamma_i^{AB} = 1/2 g_il (D^B G^{lA} + D^A G^{lB} - D^l G^{AB})
//! ```
//!
//! where `D^c` is the lowered-index derivative for `c < d` and `d/ds` for
//! `c = d`, and `l` runs over the base indices only. The spatial block is the
//! ordinary connection form, `Gamma_i^{jd}` is the gauge block and
//! `Gamma_i^{dd} = g_ib (e/m) dA^b/ds`. Curvature is
//!
//! ```text
//! R_i^{ACl} = T[A][C][l] - T[A][l][C],
//! T[A][C][B] = D^C Gamma_i^{AB} + Gamma_i^{Cb} Gamma_b^{AB}
//! ```
//!
//! so that the deviation equation reads `D^2 xi_i = R_i^{ACl} U_A U_C xi_l`
//! with `U = (xdot_mu, 1)`.

use serde::Serialize;

use crate::error::Result;
use crate::fields::{ExtendedJet, ExtendedMetric};
use crate::linalg;

/// Deliberate-fault switches used by the self-check suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fault {
    /// Negate the gauge block `Gamma_i^{4k}` / `Gamma_mu^{5 sigma}`.
    FlipGamma4,
}

/// `Gamma_i^{jk}`, `Gamma_i^{4k}` (or `^{5k}`) and `Gamma_i^{44}` (or `^{55}`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectionBlock {
    pub dim: usize,
    /// `[i][j][k]`, symmetric in `(j, k)`.
    pub gamma: Vec<f64>,
    /// `[i][k]` = `Gamma_i^{4k}` = `Gamma_i^{k4}`.
    pub gamma4: Vec<f64>,
    /// `[i]`
    pub gamma44: Vec<f64>,
}

impl ConnectionBlock {
    #[inline]
    pub fn gamma_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn gamma4_at(&self, i: usize, k: usize) -> f64 {
        self.gamma4[i * self.dim + k]
    }

    /// Unified access `Gamma_i^{AB}` with `A, B` in `0..=dim`.
    #[inline]
    pub fn ext(&self, i: usize, a: usize, b: usize) -> f64 {
        let d = self.dim;
        match (a < d, b < d) {
            (true, true) => self.gamma_at(i, a, b),
            (true, false) => self.gamma4_at(i, a),
            (false, true) => self.gamma4_at(i, b),
            (false, false) => self.gamma44[i],
        }
    }

    /// `-Gamma_i^{AB} U_A U_B` with `U = (u, 1)`: the normal-form geodesic acceleration.
    pub fn normal_form(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let mut acc = self.gamma44[i];
                for j in 0..d {
                    acc += 2.0 * self.gamma4_at(i, j) * u[j];
                    for k in 0..d {
                        acc += self.gamma_at(i, j, k) * u[j] * u[k];
                    }
                }
                -acc
            })
            .collect()
    }

    fn apply_fault(&mut self, fault: Option<Fault>) {
        if let Some(Fault::FlipGamma4) = fault {
            for g in &mut self.gamma4 {
                *g = -*g;
            }
        }
    }
}

/// Riemann block and the three extended blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureBlock {
    pub dim: usize,
    /// `[i][j][k][l]` = `R_i^{jkl}`, antisymmetric in `(k, l)`.
    pub riemann: Vec<f64>,
    /// `[i][k][l]` = `R_i^{4kl}`
    pub rbar_4first: Vec<f64>,
    /// `[i][k][l]` = `R_i^{k4l}`
    pub rbar_4mid: Vec<f64>,
    /// `[i][l]` = `R_i^{44l}`
    pub rbar_44: Vec<f64>,
}

impl CurvatureBlock {
    #[inline]
    pub fn riemann_at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = self.dim;
        self.riemann[((i * d + j) * d + k) * d + l]
    }

    /// Unified access `R_i^{ACl}`.
    pub fn ext(&self, i: usize, a: usize, c: usize, l: usize) -> f64 {
        let d = self.dim;
        match (a < d, c < d) {
            (true, true) => self.riemann_at(i, a, c, l),
            (false, true) => self.rbar_4first[(i * d + c) * d + l],
            (true, false) => self.rbar_4mid[(i * d + a) * d + l],
            (false, false) => self.rbar_44[i * d + l],
        }
    }

    /// `R_i^{ACl} U_A U_C xi_l` with `U = (u, 1)`.
    pub fn contract(&self, u: &[f64], xi: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let n = d + 1;
        let uu = |a: usize| if a < d { u[a] } else { 1.0 };
        (0..d)
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        let w = uu(a) * uu(c);
                        if w == 0.0 {
                            continue;
                        }
                        for l in 0..d {
                            acc += self.ext(i, a, c, l) * w * xi[l];
                        }
                    }
                }
                acc
            })
            .collect()
    }
}

/// `M^mu_{rho nu} = 1/2 g^{lambda mu} dg_{rho nu}/dx^lambda`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MForm {
    pub dim: usize,
    /// `[mu][rho][nu]`
    pub m_form: Vec<f64>,
}

impl MForm {
    #[inline]
    pub fn at(&self, mu: usize, rho: usize, nu: usize) -> f64 {
        let d = self.dim;
        self.m_form[(mu * d + rho) * d + nu]
    }

    /// `-M^mu_{rho nu} v^rho v^nu`
    pub fn acceleration(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|mu| {
                let mut acc = 0.0;
                for r in 0..d {
                    for n in 0..d {
                        acc += self.at(mu, r, n) * v[r] * v[n];
                    }
                }
                -acc
            })
            .collect()
    }
}

/// `C^{lAB}` for spatial `l`, flattened `[l][A][B]`.
fn c_tensor(jet: &ExtendedJet) -> Vec<f64> {
    let d = jet.dim;
    let n = d + 1;
    let mut c = vec![0.0; d * n * n];
    for l in 0..d {
        for a in 0..n {
            for b in a..n {
                let v = jet.d_ext_at(b, l, a) + jet.d_ext_at(a, l, b) - jet.d_ext_at(l, a, b);
                c[(l * n + a) * n + b] = v;
                c[(l * n + b) * n + a] = v;
            }
        }
    }
    c
}

/// Full `Gamma_i^{AB}`, `[i][A][B]`.
fn gamma_ext(jet: &ExtendedJet, c: &[f64]) -> Vec<f64> {
    let d = jet.dim;
    let n = d + 1;
    let mut g = vec![0.0; d * n * n];
    for i in 0..d {
        for a in 0..n {
            for b in a..n {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += jet.lower_at(i, l) * c[(l * n + a) * n + b];
                }
                g[(i * n + a) * n + b] = 0.5 * acc;
                g[(i * n + b) * n + a] = 0.5 * acc;
            }
        }
    }
    g
}

fn block_from_ext(d: usize, g: &[f64]) -> ConnectionBlock {
    let n = d + 1;
    let mut gamma = vec![0.0; d * d * d];
    let mut gamma4 = vec![0.0; d * d];
    let mut gamma44 = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                gamma[(i * d + j) * d + k] = g[(i * n + j) * n + k];
            }
            gamma4[i * d + j] = g[(i * n + d) * n + j];
        }
        gamma44[i] = g[(i * n + d) * n + d];
    }
    ConnectionBlock {
        dim: d,
        gamma,
        gamma4,
        gamma44,
    }
}

/// Connection blocks at `(x, s)`.
pub fn connection(metric: &ExtendedMetric, x: &[f64], s: f64) -> Result<ConnectionBlock> {
    connection_with_fault(metric, x, s, None)
}

/// [`connection`] with an optional deliberate fault applied.
pub fn connection_with_fault(
    metric: &ExtendedMetric,
    x: &[f64],
    s: f64,
    fault: Option<Fault>,
) -> Result<ConnectionBlock> {
    let jet = metric.jet(x, s)?;
    let mut block = connection_from_jet(&jet);
    block.apply_fault(fault);
    Ok(block)
}

pub fn connection_from_jet(jet: &ExtendedJet) -> ConnectionBlock {
    let c = c_tensor(jet);
    block_from_ext(jet.dim, &gamma_ext(jet, &c))
}

/// Curvature blocks at `(x, s)`; needs second partials of the metric and gauge.
pub fn curvature(metric: &ExtendedMetric, x: &[f64], s: f64) -> Result<CurvatureBlock> {
    let jet = metric.jet(x, s)?;
    Ok(curvature_from_jet(&jet))
}

pub fn curvature_from_jet(jet: &ExtendedJet) -> CurvatureBlock {
    let d = jet.dim;
    let n = d + 1;
    let c = c_tensor(jet);
    let g = gamma_ext(jet, &c);

    // D^e Gamma_i^{AB} = 1/2 (D^e g_il) C^{lAB} + 1/2 g_il D^e C^{lAB}
    let mut dg = vec![0.0; n * d * n * n];
    for e in 0..n {
        let dginv: Vec<f64> = (0..d * d)
            .map(|k| jet.d_ext_at(e, k / d, k % d))
            .collect();
        let tmp = linalg::mat_mul(d, &jet.lower, &dginv);
        let dlower: Vec<f64> = linalg::mat_mul(d, &tmp, &jet.lower)
            .into_iter()
            .map(|v| -v)
            .collect();
        for i in 0..d {
            for a in 0..n {
                for b in a..n {
                    let mut acc = 0.0;
                    for l in 0..d {
                        let dc = jet.dd_ext_at(e, b, l, a) + jet.dd_ext_at(e, a, l, b)
                            - jet.dd_ext_at(e, l, a, b);
                        acc += dlower[i * d + l] * c[(l * n + a) * n + b] + jet.lower_at(i, l) * dc;
                    }
                    dg[((e * d + i) * n + a) * n + b] = 0.5 * acc;
                    dg[((e * d + i) * n + b) * n + a] = 0.5 * acc;
                }
            }
        }
    }

    let gam = |i: usize, a: usize, b: usize| g[(i * n + a) * n + b];
    let mut riemann = vec![0.0; d * d * d * d];
    let mut rbar_4first = vec![0.0; d * d * d];
    let mut rbar_4mid = vec![0.0; d * d * d];
    let mut rbar_44 = vec![0.0; d * d];
    for i in 0..d {
        // T[A][C][B] for this i
        let mut t = vec![0.0; n * n * n];
        for a in 0..n {
            for cc in 0..n {
                for b in 0..n {
                    let mut acc = dg[((cc * d + i) * n + a) * n + b];
                    for bb in 0..d {
                        acc += gam(i, cc, bb) * gam(bb, a, b);
                    }
                    t[(a * n + cc) * n + b] = acc;
                }
            }
        }
        let r = |a: usize, cc: usize, l: usize| t[(a * n + cc) * n + l] - t[(a * n + l) * n + cc];
        for l in 0..d {
            for j in 0..d {
                for k in 0..d {
                    riemann[((i * d + j) * d + k) * d + l] = r(j, k, l);
                }
                rbar_4first[(i * d + j) * d + l] = r(d, j, l);
                rbar_4mid[(i * d + j) * d + l] = r(j, d, l);
            }
            rbar_44[i * d + l] = r(d, d, l);
        }
    }
    CurvatureBlock {
        dim: d,
        riemann,
        rbar_4first,
        rbar_4mid,
        rbar_44,
    }
}

/// M-form at `(x, s)`.
pub fn m_form(metric: &ExtendedMetric, x: &[f64], s: f64) -> Result<MForm> {
    let jet = metric.jet(x, s)?;
    Ok(m_form_from_jet(&jet))
}

pub fn m_form_from_jet(jet: &ExtendedJet) -> MForm {
    let d = jet.dim;
    let dl: Vec<Vec<f64>> = (0..d).map(|lam| jet.d_lower_upper(lam)).collect();
    let mut m = vec![0.0; d * d * d];
    for mu in 0..d {
        for r in 0..d {
            for nu in r..d {
                let mut acc = 0.0;
                for lam in 0..d {
                    acc += jet.inverse[lam * d + mu] * dl[lam][r * d + nu];
                }
                m[(mu * d + r) * d + nu] = 0.5 * acc;
                m[(mu * d + nu) * d + r] = 0.5 * acc;
            }
        }
    }
    MForm { dim: d, m_form: m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::*;
    use std::sync::Arc;

    fn flat(d: usize) -> ExtendedMetric {
        ExtendedMetric::pure(Arc::new(ConstantMetric::flat(d)))
    }

    fn uniform_b(d: usize, b: f64) -> ExtendedMetric {
        let p = ParticleParams::new(1.0, 1.0, 1.0).unwrap();
        extend_metric(
            Arc::new(ConstantMetric::flat(d)),
            Some(Arc::new(AffineVector::uniform_magnetic(d, [0.0, 0.0, b]))),
            &p,
            0.0,
        )
        .unwrap()
    }

    fn oscillator_metric() -> ExtendedMetric {
        let v = Arc::new(Quadratic {
            dim: 3,
            k: 1.0,
            axes: vec![0],
        });
        ExtendedMetric::pure(Arc::new(ConformalMetric::new(1.0, v).unwrap()))
    }

    #[test]
    fn flat_static_blocks_vanish() {
        for d in [3, 4] {
            let x = vec![0.3; d];
            let c = connection(&flat(d), &x, 0.2).unwrap();
            assert!(c.gamma.iter().chain(&c.gamma4).chain(&c.gamma44).all(|&v| v == 0.0));
            let r = curvature(&flat(d), &x, 0.2).unwrap();
            assert!(r
                .riemann
                .iter()
                .chain(&r.rbar_4first)
                .chain(&r.rbar_4mid)
                .chain(&r.rbar_44)
                .all(|&v| v == 0.0));
            let m = m_form(&flat(d), &x, 0.2).unwrap();
            assert!(m.m_form.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn uniform_b_gauge_block() {
        let c = connection(&uniform_b(3, 2.0), &[0.4, -0.7, 0.1], 0.0).unwrap();
        assert!(c.gamma.iter().all(|&v| v == 0.0));
        assert!(c.gamma44.iter().all(|&v| v == 0.0));
        assert_eq!(c.gamma4_at(0, 1), -1.0);
        assert_eq!(c.gamma4_at(1, 0), 1.0);
        for (i, k) in [(0, 0), (1, 1), (2, 2), (0, 2), (2, 0), (1, 2), (2, 1)] {
            assert_eq!(c.gamma4_at(i, k), 0.0);
        }
    }

    #[test]
    fn gamma_symmetric_in_upper_pair() {
        let m = oscillator_metric();
        let c = connection(&m, &[0.7, 0.2, -0.3], 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(c.gamma_at(i, j, k), c.gamma_at(i, k, j));
                }
            }
        }
    }

    #[test]
    fn oscillator_gamma_matches_central_difference() {
        // Gamma_i^{jk} = 1/2 g_il (dg^{lj}/dx_k + dg^{lk}/dx_j - dg^{jk}/dx_l), oracle by differencing g^{ij}
        let m = oscillator_metric();
        let x = [1.0, 0.0, 0.0];
        let c = connection(&m, &x, 0.0).unwrap();
        let inv = |x: &[f64]| m.inverse(x, 0.0).unwrap();
        let h = 1e-5;
        let dinv: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += h;
                xm[c] -= h;
                inv(&xp).iter().zip(inv(&xm)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            })
            .collect();
        let g = m.lower(&x, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        acc += g[i * 3 + l]
                            * (dinv[k][l * 3 + j] + dinv[j][l * 3 + k] - dinv[l][j * 3 + k]);
                    }
                    assert!((0.5 * acc - c.gamma_at(i, j, k)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn m_form_symmetric_and_matches_oracle() {
        let p = ParticleParams::new(1.0, 0.0, 1.0).unwrap();
        let v: Arc<dyn ScalarField> = Arc::new(Quadratic {
            dim: 4,
            k: 1.0,
            axes: vec![1],
        });
        let m = extend_metric(Arc::new(ConformalMetric::new(p.shell, v).unwrap()), None, &p, 0.0).unwrap();
        let x = [0.0, 1.0, 0.0, 0.0];
        let mf = m_form(&m, &x, 0.0).unwrap();
        let h = 1e-5;
        let lower = |x: &[f64]| m.lower(x, 0.0).unwrap();
        let ginv = m.inverse(&x, 0.0).unwrap();
        for mu in 0..4 {
            for r in 0..4 {
                for nu in 0..4 {
                    let mut acc = 0.0;
                    for lam in 0..4 {
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[lam] += h;
                        xm[lam] -= h;
                        let dg = (lower(&xp)[r * 4 + nu] - lower(&xm)[r * 4 + nu]) / (2.0 * h);
                        acc += ginv[lam * 4 + mu] * dg;
                    }
                    assert!((0.5 * acc - mf.at(mu, r, nu)).abs() < 1e-6);
                    assert_eq!(mf.at(mu, r, nu), mf.at(mu, nu, r));
                }
            }
        }
    }

    #[test]
    fn magnetic_rbar44_is_gauge_block_product() {
        // static metric and gauge: the derivative part of R^{44l} vanishes,
        // leaving Gamma_i^{4b} Gamma_b^{4l}
        let m = uniform_b(3, 2.0);
        let x = [0.2, 0.1, -0.5];
        let c = connection(&m, &x, 0.0).unwrap();
        let r = curvature(&m, &x, 0.0).unwrap();
        for i in 0..3 {
            for l in 0..3 {
                let prod: f64 = (0..3).map(|b| c.gamma4_at(i, b) * c.gamma4_at(b, l)).sum();
                assert!((r.rbar_44[i * 3 + l] - prod).abs() < 1e-14);
            }
        }
        assert!((r.rbar_44[0] + 1.0).abs() < 1e-14);
        let r0 = curvature(&flat(3), &x, 0.0).unwrap();
        assert!(r0.rbar_44.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn riemann_antisymmetric_in_last_pair() {
        let m = oscillator_metric();
        let r = curvature(&m, &[0.6, 0.3, -0.2], 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        assert_eq!(r.riemann_at(i, j, k, l), -r.riemann_at(i, j, l, k));
                    }
                }
            }
        }
    }
}
