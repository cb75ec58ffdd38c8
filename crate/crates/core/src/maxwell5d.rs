//! Five-dimensional pre-Maxwell fields on uniform grids.
//!
//! A sampled field has components `a^beta`, `beta = 0..4` (`a^mu` then
//! `a^5`), on a rectangular grid over `(x^0, .., x^3)` and a periodic window
//! in `tau`. Storage is row-major `[component][tau][x0][x1][x2][x3]`.
//!
//! Spatial derivatives are second-order central differences (results are
//! reported on interior points only); `tau` derivatives are spectral over the
//! periodic window. The wave operator is
//! `box = eta^{mu nu} d_mu d_nu + sigma d_tau^2` with `eta = diag(-1,1,1,1)`,
//! and modes follow `a(x, tau) = sum_s a(x, s) exp(-i s tau)`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ETA: [f64; 4] = [-1.0, 1.0, 1.0, 1.0];

/// Uniform sampling of `(x^0, .., x^3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid4 {
    pub n: [usize; 4],
    pub h: [f64; 4],
    pub origin: [f64; 4],
}

impl Grid4 {
    pub fn new(n: [usize; 4], h: [f64; 4], origin: [f64; 4]) -> Result<Self> {
        for axis in 0..4 {
            if n[axis] < 4 {
                return Err(Error::GridTooSmall {
                    axis,
                    points: n[axis],
                    needed: 4,
                });
            }
            if !(h[axis] > 0.0) || !h[axis].is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "grid spacing on axis {axis} must be positive"
                )));
            }
        }
        Ok(Self { n, h, origin })
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: [usize; 4]) -> usize {
        ((i[0] * self.n[1] + i[1]) * self.n[2] + i[2]) * self.n[3] + i[3]
    }

    pub fn multi(&self, mut k: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for axis in (0..4).rev() {
            out[axis] = k % self.n[axis];
            k /= self.n[axis];
        }
        out
    }

    pub fn point(&self, i: [usize; 4]) -> [f64; 4] {
        let mut p = [0.0; 4];
        for a in 0..4 {
            p[a] = self.origin[a] + i[a] as f64 * self.h[a];
        }
        p
    }

    pub fn is_interior(&self, i: [usize; 4]) -> bool {
        (0..4).all(|a| i[a] > 0 && i[a] + 1 < self.n[a])
    }

    fn stride(&self, axis: usize) -> usize {
        self.n[axis + 1..].iter().product()
    }
}

/// Uniform periodic sampling window in `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauAxis {
    pub n: usize,
    pub dtau: f64,
    pub tau0: f64,
}

impl TauAxis {
    pub fn new(n: usize, dtau: f64, tau0: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::GridTooSmall {
                axis: 4,
                points: n,
                needed: 4,
            });
        }
        if !(dtau > 0.0) || !dtau.is_finite() {
            return Err(Error::InvalidParameter("tau spacing must be positive".into()));
        }
        Ok(Self { n, dtau, tau0 })
    }

    /// Builds the axis from explicit sample positions, which must be evenly spaced.
    pub fn from_samples(taus: &[f64]) -> Result<Self> {
        if taus.len() < 4 {
            return Err(Error::GridTooSmall {
                axis: 4,
                points: taus.len(),
                needed: 4,
            });
        }
        let n = taus.len();
        let dtau = (taus[n - 1] - taus[0]) / (n - 1) as f64;
        let deviation = taus
            .windows(2)
            .map(|w| ((w[1] - w[0]) - dtau).abs() / dtau.abs())
            .fold(0.0, f64::max);
        if !(deviation <= 1e-9) {
            return Err(Error::NonUniformSampling { deviation });
        }
        Self::new(n, dtau, taus[0])
    }

    pub fn tau(&self, t: usize) -> f64 {
        self.tau0 + t as f64 * self.dtau
    }

    pub fn period(&self) -> f64 {
        self.n as f64 * self.dtau
    }

    /// Mode frequency `s_k` for FFT index `k` (signed, `[-n/2, n/2)`).
    pub fn frequency(&self, k: usize) -> f64 {
        let signed = if k < self.n.div_ceil(2) { k as f64 } else { k as f64 - self.n as f64 };
        2.0 * PI * signed / self.period()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.frequency(k)).collect()
    }
}

/// Real field sampled over `tau x Grid4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid4,
    pub tau: TauAxis,
    pub components: usize,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid4, tau: TauAxis, components: usize) -> Self {
        Self {
            grid,
            tau,
            components,
            data: vec![0.0; components * tau.n * grid.len()],
        }
    }

    /// Samples `f(x, tau) -> components` at every grid node.
    pub fn sample(grid: Grid4, tau: TauAxis, components: usize, f: impl Fn([f64; 4], f64) -> Vec<f64>) -> Self {
        let mut out = Self::zeros(grid, tau, components);
        let block = grid.len();
        for t in 0..tau.n {
            for k in 0..block {
                let v = f(grid.point(grid.multi(k)), tau.tau(t));
                for c in 0..components {
                    out.data[(c * tau.n + t) * block + k] = v[c];
                }
            }
        }
        out
    }

    #[inline]
    pub fn offset(&self, c: usize, t: usize) -> usize {
        (c * self.tau.n + t) * self.grid.len()
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, i: [usize; 4]) -> f64 {
        self.data[self.offset(c, t) + self.grid.index(i)]
    }

    fn check_shape(&self, other: &GridField, what: &'static str) -> Result<()> {
        if self.grid != other.grid || self.tau != other.tau {
            return Err(Error::InvalidParameter(format!("{what}: grids differ")));
        }
        Ok(())
    }

    fn expect_components(&self, n: usize, what: &'static str) -> Result<()> {
        if self.components != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got: self.components,
            });
        }
        Ok(())
    }

    /// `max |value|` over interior spatial points, all `tau` and components.
    pub fn max_interior(&self) -> f64 {
        let block = self.grid.len();
        let mut worst: f64 = 0.0;
        for k in 0..block {
            if !self.grid.is_interior(self.grid.multi(k)) {
                continue;
            }
            for ct in 0..self.components * self.tau.n {
                worst = worst.max(self.data[ct * block + k].abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Real field over `Grid4` only (no `tau` axis), e.g. a reduced Maxwell potential.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialField {
    pub grid: Grid4,
    pub components: usize,
    pub data: Vec<f64>,
}

impl SpatialField {
    pub fn at(&self, c: usize, i: [usize; 4]) -> f64 {
        self.data[c * self.grid.len() + self.grid.index(i)]
    }
}

/// One `tau`-Fourier mode of a five-component field.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField {
    pub s: f64,
    pub sigma: f64,
    pub grid: Grid4,
    pub components: usize,
    /// `[component][x0][x1][x2][x3]`
    pub amplitude: Vec<Complex64>,
}

impl ModeField {
    pub fn sample(s: f64, sigma: f64, grid: Grid4, components: usize, f: impl Fn([f64; 4]) -> Vec<Complex64>) -> Result<Self> {
        check_sigma(sigma)?;
        let block = grid.len();
        let mut amplitude = vec![Complex64::new(0.0, 0.0); components * block];
        for k in 0..block {
            let v = f(grid.point(grid.multi(k)));
            for c in 0..components {
                amplitude[c * block + k] = v[c];
            }
        }
        Ok(Self {
            s,
            sigma,
            grid,
            components,
            amplitude,
        })
    }

    pub fn at(&self, c: usize, i: [usize; 4]) -> Complex64 {
        self.amplitude[c * self.grid.len() + self.grid.index(i)]
    }

    pub fn max_interior(&self) -> f64 {
        let block = self.grid.len();
        let mut worst: f64 = 0.0;
        for k in 0..block {
            if self.grid.is_interior(self.grid.multi(k)) {
                for c in 0..self.components {
                    worst = worst.max(self.amplitude[c * block + k].norm());
                }
            }
        }
        worst
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma != 1.0 && sigma != -1.0 {
        return Err(Error::InvalidParameter(format!("sigma must be +1 or -1, got {sigma}")));
    }
    Ok(())
}

/// Exact symbol of `sigma s^2 - d_mu d^mu` on `exp(i k.x)`: `sigma s^2 + k_mu k^mu`.
pub fn mode_eigenvalue(sigma: f64, s: f64, k: [f64; 4]) -> f64 {
    sigma * s * s + (0..4).map(|m| ETA[m] * k[m] * k[m]).sum::<f64>()
}

/// The same symbol for the central-difference operator on `grid`.
pub fn discrete_mode_eigenvalue(grid: &Grid4, sigma: f64, s: f64, k: [f64; 4]) -> f64 {
    let mut lam = sigma * s * s;
    for m in 0..4 {
        let h = grid.h[m];
        lam += ETA[m] * 4.0 / (h * h) * (0.5 * k[m] * h).sin().powi(2);
    }
    lam
}

/// Central second difference along `axis` at interior point `k` (flat index within a block).
#[inline]
fn d2(block: &[f64], grid: &Grid4, k: usize, axis: usize) -> f64 {
    let st = grid.stride(axis);
    let h = grid.h[axis];
    (block[k + st] - 2.0 * block[k] + block[k - st]) / (h * h)
}

#[inline]
fn d2c(block: &[Complex64], grid: &Grid4, k: usize, axis: usize) -> Complex64 {
    let st = grid.stride(axis);
    let h = grid.h[axis];
    (block[k + st] - 2.0 * block[k] + block[k - st]) / (h * h)
}

/// First derivative along a spatial axis: central inside, second-order one-sided at the ends.
fn d1_full(block: &[f64], grid: &Grid4, k: usize, axis: usize) -> f64 {
    let st = grid.stride(axis);
    let h = grid.h[axis];
    let i = grid.multi(k)[axis];
    let n = grid.n[axis];
    if i == 0 {
        (-3.0 * block[k] + 4.0 * block[k + st] - block[k + 2 * st]) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * block[k] - 4.0 * block[k - st] + block[k - 2 * st]) / (2.0 * h)
    } else {
        (block[k + st] - block[k - st]) / (2.0 * h)
    }
}

/// Spectral `d^order/dtau^order` of every component at every grid node.
fn tau_derivative(field: &GridField, order: u32) -> GridField {
    let nt = field.tau.n;
    let block = field.grid.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);
    let freqs = field.tau.frequencies();
    // exp(-i s tau) differentiates to (-i s)^order
    let factors: Vec<Complex64> = freqs
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if order % 2 == 1 && nt % 2 == 0 && k == nt / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -s).powu(order)
            }
        })
        .collect();
    let mut out = GridField::zeros(field.grid, field.tau, field.components);
    let mut buf = vec![Complex64::new(0.0, 0.0); nt];
    for c in 0..field.components {
        for k in 0..block {
            for t in 0..nt {
                buf[t] = Complex64::new(field.data[field.offset(c, t) + k], 0.0);
            }
            // c_k proportional to sum_n a_n exp(+2 pi i k n / N): the inverse FFT kernel
            inv.process(&mut buf);
            for (b, f) in buf.iter_mut().zip(&factors) {
                *b *= f;
            }
            fwd.process(&mut buf);
            for t in 0..nt {
                out.data[field.offset(c, t) + k] = buf[t].re / nt as f64;
            }
        }
    }
    out
}

/// Interior residual of `-box a^beta - j^beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveResidual {
    pub residual: GridField,
    pub max_interior: f64,
    /// `max |d_alpha a^alpha|` at interior points; a Lorenz-gauge check, reported not enforced.
    pub gauge_violation: f64,
}

/// `-box a^beta - j^beta` on interior points (boundary entries are zero).
pub fn wave_residual(a: &GridField, j: &GridField, sigma: f64) -> Result<WaveResidual> {
    check_sigma(sigma)?;
    a.check_shape(j, "wave_residual")?;
    if a.components != j.components {
        return Err(Error::DimensionMismatch {
            what: "current components",
            expected: a.components,
            got: j.components,
        });
    }
    let box_a = box_operator(a, sigma);
    let mut residual = GridField::zeros(a.grid, a.tau, a.components);
    for (r, (b, jv)) in residual.data.iter_mut().zip(box_a.data.iter().zip(&j.data)) {
        *r = -b - jv;
    }
    zero_boundary(&mut residual);
    let max_interior = residual.max_interior();
    let gauge_violation = if a.components == 5 { divergence(a).max_interior() } else { 0.0 };
    Ok(WaveResidual {
        residual,
        max_interior,
        gauge_violation,
    })
}

fn zero_boundary(f: &mut GridField) {
    let block = f.grid.len();
    for k in 0..block {
        if !f.grid.is_interior(f.grid.multi(k)) {
            for ct in 0..f.components * f.tau.n {
                f.data[ct * block + k] = 0.0;
            }
        }
    }
}

/// `box a` at interior points; boundary entries are zero.
fn box_operator(a: &GridField, sigma: f64) -> GridField {
    let block = a.grid.len();
    let tt = tau_derivative(a, 2);
    let mut out = GridField::zeros(a.grid, a.tau, a.components);
    for c in 0..a.components {
        for t in 0..a.tau.n {
            let off = a.offset(c, t);
            let src = &a.data[off..off + block];
            for k in 0..block {
                if !a.grid.is_interior(a.grid.multi(k)) {
                    continue;
                }
                let mut v = sigma * tt.data[off + k];
                for m in 0..4 {
                    v += ETA[m] * d2(src, &a.grid, k, m);
                }
                out.data[off + k] = v;
            }
        }
    }
    out
}

/// `d_mu a^mu + d_tau a^5`, one component.
fn divergence(a: &GridField) -> GridField {
    let block = a.grid.len();
    let dt = tau_derivative(a, 1);
    let mut out = GridField::zeros(a.grid, a.tau, 1);
    for t in 0..a.tau.n {
        for k in 0..block {
            let mut v = dt.data[a.offset(4, t) + k];
            for m in 0..4 {
                let off = a.offset(m, t);
                v += d1_full(&a.data[off..off + block], &a.grid, k, m);
            }
            out.data[t * block + k] = v;
        }
    }
    out
}

/// Interior residual of `(sigma s^2 - d_mu d^mu) a - j` for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResidual {
    pub residual: ModeField,
    pub max_interior: f64,
}

pub fn mode_residual(mode: &ModeField, j_mode: &ModeField) -> Result<ModeResidual> {
    check_sigma(mode.sigma)?;
    if mode.grid != j_mode.grid || mode.components != j_mode.components {
        return Err(Error::InvalidParameter("mode and current live on different grids".into()));
    }
    if mode.s != j_mode.s || mode.sigma != j_mode.sigma {
        return Err(Error::InvalidParameter("mode and current carry different s or sigma".into()));
    }
    let grid = mode.grid;
    let block = grid.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut out = vec![zero; mode.amplitude.len()];
    for c in 0..mode.components {
        let src = &mode.amplitude[c * block..(c + 1) * block];
        for k in 0..block {
            if !grid.is_interior(grid.multi(k)) {
                continue;
            }
            let mut v = mode.sigma * mode.s * mode.s * src[k];
            for m in 0..4 {
                v -= ETA[m] * d2c(src, &grid, k, m);
            }
            out[c * block + k] = v - j_mode.amplitude[c * block + k];
        }
    }
    let residual = ModeField {
        s: mode.s,
        sigma: mode.sigma,
        grid,
        components: mode.components,
        amplitude: out,
    };
    let max_interior = residual.max_interior();
    Ok(ModeResidual {
        residual,
        max_interior,
    })
}

/// Discrete Fourier decomposition along `tau`; one mode per FFT index.
pub fn fourier_modes(field: &GridField, sigma: f64) -> Result<Vec<ModeField>> {
    check_sigma(sigma)?;
    let nt = field.tau.n;
    let block = field.grid.len();
    let mut planner = FftPlanner::<f64>::new();
    let inv = planner.plan_fft_inverse(nt);
    let freqs = field.tau.frequencies();
    let mut modes: Vec<ModeField> = freqs
        .iter()
        .map(|&s| ModeField {
            s,
            sigma,
            grid: field.grid,
            components: field.components,
            amplitude: vec![Complex64::new(0.0, 0.0); field.components * block],
        })
        .collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); nt];
    for c in 0..field.components {
        for k in 0..block {
            for t in 0..nt {
                buf[t] = Complex64::new(field.data[field.offset(c, t) + k], 0.0);
            }
            inv.process(&mut buf);
            for (m, mode) in modes.iter_mut().enumerate() {
                // c_m = (1/N) exp(i s_m tau0) sum_n a_n exp(2 pi i m n / N)
                let phase = Complex64::from_polar(1.0 / nt as f64, freqs[m] * field.tau.tau0);
                mode.amplitude[c * block + k] = buf[m] * phase;
            }
        }
    }
    Ok(modes)
}

/// Re-synthesizes `tau` samples from a full set of modes.
pub fn inverse_modes(modes: &[ModeField], tau: TauAxis) -> Result<GridField> {
    if modes.len() != tau.n {
        return Err(Error::DimensionMismatch {
            what: "mode count vs tau samples",
            expected: tau.n,
            got: modes.len(),
        });
    }
    let grid = modes[0].grid;
    let comps = modes[0].components;
    let block = grid.len();
    let nt = tau.n;
    let freqs = tau.frequencies();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nt);
    let mut out = GridField::zeros(grid, tau, comps);
    let mut buf = vec![Complex64::new(0.0, 0.0); nt];
    for c in 0..comps {
        for k in 0..block {
            for m in 0..nt {
                buf[m] = modes[m].amplitude[c * block + k] * Complex64::from_polar(1.0, -freqs[m] * tau.tau0);
            }
            fwd.process(&mut buf);
            for t in 0..nt {
                let o = out.offset(c, t);
                out.data[o + k] = buf[t].re;
            }
        }
    }
    Ok(out)
}

/// Applies [`mode_residual`] mode by mode and transforms back to `tau`.
pub fn mode_space_residual(a: &GridField, j: &GridField, sigma: f64) -> Result<GridField> {
    a.check_shape(j, "mode_space_residual")?;
    let am = fourier_modes(a, sigma)?;
    let jm = fourier_modes(j, sigma)?;
    let res: Vec<ModeField> = am
        .iter()
        .zip(&jm)
        .map(|(a, j)| mode_residual(a, j).map(|r| r.residual))
        .collect::<Result<_>>()?;
    inverse_modes(&res, a.tau)
}

/// Maxwell quantities from the `tau`-integrated zero mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroMode {
    pub potential: SpatialField,
    pub current: SpatialField,
    /// `max |d_mu J^mu|` over interior points.
    pub continuity: f64,
}

/// Largest endpoint magnitude relative to the peak.
fn tail_ratio(f: &GridField) -> f64 {
    let peak = f.max_abs();
    if peak == 0.0 {
        return 0.0;
    }
    let block = f.grid.len();
    let mut tail: f64 = 0.0;
    for c in 0..f.components {
        for t in [0, f.tau.n - 1] {
            let off = f.offset(c, t);
            for k in 0..block {
                tail = tail.max(f.data[off + k].abs());
            }
        }
    }
    tail / peak
}

fn integrate_tau(f: &GridField, comps: usize) -> SpatialField {
    let block = f.grid.len();
    let nt = f.tau.n;
    let mut data = vec![0.0; comps * block];
    for c in 0..comps {
        for k in 0..block {
            let mut acc = 0.0;
            for t in 0..nt {
                let w = if t == 0 || t + 1 == nt { 0.5 } else { 1.0 };
                acc += w * f.data[f.offset(c, t) + k];
            }
            data[c * block + k] = acc * f.tau.dtau;
        }
    }
    SpatialField {
        grid: f.grid,
        components: comps,
        data,
    }
}

/// `A^mu = int a^mu dtau`, `J^mu = int j^mu dtau` by the trapezoid rule.
pub fn zero_mode_reduce(a: &GridField, j: &GridField) -> Result<ZeroMode> {
    a.check_shape(j, "zero_mode_reduce")?;
    if a.components < 4 || j.components < 4 {
        return Err(Error::DimensionMismatch {
            what: "field components (at least 4)",
            expected: 5,
            got: a.components.min(j.components),
        });
    }
    for f in [a, j] {
        let ratio = tail_ratio(f);
        if ratio > 1e-10 {
            return Err(Error::NonConvergentTail { ratio });
        }
    }
    let potential = integrate_tau(a, 4);
    let current = integrate_tau(j, 4);
    let grid = a.grid;
    let block = grid.len();
    let mut continuity: f64 = 0.0;
    for k in 0..block {
        if !grid.is_interior(grid.multi(k)) {
            continue;
        }
        let mut v = 0.0;
        for m in 0..4 {
            v += d1_full(&current.data[m * block..(m + 1) * block], &grid, k, m);
        }
        continuity = continuity.max(v.abs());
    }
    Ok(ZeroMode {
        potential,
        current,
        continuity,
    })
}

/// `max |d_beta j^beta|` at interior points of a five-component current.
pub fn current_divergence(j: &GridField) -> Result<f64> {
    j.expect_components(5, "current components")?;
    Ok(divergence(j).max_interior())
}

/// `f^{beta alpha} = d^beta a^alpha - d^alpha a^beta` at interior points, 25 components `[beta][alpha]`.
pub fn field_strength_grid(a: &GridField, sigma: f64) -> Result<GridField> {
    check_sigma(sigma)?;
    a.expect_components(5, "gauge field components")?;
    let grads = raised_gradients(a, sigma);
    let block = a.grid.len();
    let nt = a.tau.n;
    let mut out = GridField::zeros(a.grid, a.tau, 25);
    for b in 0..5 {
        for al in 0..5 {
            for t in 0..nt {
                for k in 0..block {
                    // grads[beta] holds d^beta a^alpha for all alpha
                    let v = grads[b].data[grads[b].offset(al, t) + k] - grads[al].data[grads[al].offset(b, t) + k];
                    let o = out.offset(b * 5 + al, t);
                    out.data[o + k] = v;
                }
            }
        }
    }
    zero_boundary(&mut out);
    Ok(out)
}

/// `grads[beta]` = `d^beta` applied to every component of `a`.
fn raised_gradients(a: &GridField, sigma: f64) -> Vec<GridField> {
    let block = a.grid.len();
    let mut grads = Vec::with_capacity(5);
    for m in 0..4 {
        let mut g = GridField::zeros(a.grid, a.tau, a.components);
        for c in 0..a.components {
            for t in 0..a.tau.n {
                let off = a.offset(c, t);
                let src = &a.data[off..off + block];
                for k in 0..block {
                    g.data[off + k] = ETA[m] * d1_full(src, &a.grid, k, m);
                }
            }
        }
        grads.push(g);
    }
    let mut gt = tau_derivative(a, 1);
    for v in gt.data.iter_mut() {
        *v *= sigma;
    }
    grads.push(gt);
    grads
}

/// `a^alpha -> a^alpha + d^alpha Lambda`, after checking `box Lambda = 0` on the grid.
pub fn gauge_transform(a: &GridField, lambda: &GridField, sigma: f64) -> Result<GridField> {
    check_sigma(sigma)?;
    a.expect_components(5, "gauge field components")?;
    lambda.expect_components(1, "gauge function components")?;
    a.check_shape(lambda, "gauge_transform")?;
    let threshold = 1e-8 * lambda.max_abs().max(1.0);
    let residual = box_operator(lambda, sigma).max_interior();
    if !(residual <= threshold) {
        return Err(Error::NotAGaugeFunction { residual, threshold });
    }
    let grads = raised_gradients(lambda, sigma);
    let mut out = a.clone();
    for (al, g) in grads.iter().enumerate() {
        let off_out = out.offset(al, 0);
        let n = a.tau.n * a.grid.len();
        for idx in 0..n {
            out.data[off_out + idx] += g.data[idx];
        }
    }
    Ok(out)
}

/// Largest interior change of `f^{beta alpha}` between two gauge fields.
pub fn field_strength_change(a: &GridField, b: &GridField, sigma: f64) -> Result<f64> {
    let fa = field_strength_grid(a, sigma)?;
    let fb = field_strength_grid(b, sigma)?;
    let diff = GridField {
        data: fa.data.iter().zip(&fb.data).map(|(x, y)| x - y).collect(),
        ..fa
    };
    Ok(diff.max_interior())
}

/// Time frequency `k_0 > 0` putting `cos(k.x - s tau)` on the discrete null
/// cone of `box`, given the spatial wavevector and `s`.
/// `s` should be a lattice frequency of the `tau` window so the spectral
/// derivative is exact.
pub fn discrete_null_frequency(grid: &Grid4, sigma: f64, k_spatial: [f64; 3], s: f64) -> Result<f64> {
    let mut rhs = sigma * -s * s;
    for i in 0..3 {
        let h = grid.h[i + 1];
        rhs -= 4.0 / (h * h) * (0.5 * k_spatial[i] * h).sin().powi(2);
    }
    // -4/h0^2 sin^2(k0 h0 / 2) * (-1) + spatial + sigma(-s^2) = 0
    let h0 = grid.h[0];
    let target = -rhs * h0 * h0 / 4.0;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidParameter(
            "no real frequency puts this wave on the discrete null cone".into(),
        ));
    }
    Ok(2.0 / h0 * target.sqrt().asin())
}

/// Solves `-box a = rho` for a field periodic in every direction by division
/// in full Fourier space. The mean (zero-symbol) part of `rho` is dropped;
/// the returned source is the one actually solved for.
pub fn periodic_solve(rho: &GridField, sigma: f64) -> Result<(GridField, GridField)> {
    check_sigma(sigma)?;
    let grid = rho.grid;
    let tau = rho.tau;
    let shape = [tau.n, grid.n[0], grid.n[1], grid.n[2], grid.n[3]];
    let total: usize = shape.iter().product();
    let mut planner = FftPlanner::<f64>::new();
    let mut sol = GridField::zeros(grid, tau, rho.components);
    let mut src = GridField::zeros(grid, tau, rho.components);
    // per-axis symbols of -box
    let mut sym: Vec<Vec<f64>> = Vec::with_capacity(5);
    sym.push(
        tau.frequencies()
            .iter()
            .map(|s| sigma * s * s)
            .collect(),
    );
    for m in 0..4 {
        let n = grid.n[m];
        let h = grid.h[m];
        sym.push(
            (0..n)
                .map(|k| {
                    let theta = PI * k as f64 / n as f64;
                    ETA[m] * 4.0 / (h * h) * theta.sin().powi(2)
                })
                .collect(),
        );
    }
    let mut max_sym: f64 = 0.0;
    for v in &sym {
        max_sym += v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    }
    for c in 0..rho.components {
        let mut buf: Vec<Complex64> = rho.data[c * total..(c + 1) * total]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        for axis in 0..5 {
            fft_axis(&mut buf, &shape, axis, false, &mut planner);
        }
        let mut kept = buf.clone();
        for idx in 0..total {
            let mut rem = idx;
            let mut ks = [0usize; 5];
            for axis in (0..5).rev() {
                ks[axis] = rem % shape[axis];
                rem /= shape[axis];
            }
            let lam: f64 = (0..5).map(|a| sym[a][ks[a]]).sum();
            if lam.abs() <= 1e-12 * max_sym {
                buf[idx] = Complex64::new(0.0, 0.0);
                kept[idx] = Complex64::new(0.0, 0.0);
            } else {
                buf[idx] /= lam;
            }
        }
        for axis in 0..5 {
            fft_axis(&mut buf, &shape, axis, true, &mut planner);
            fft_axis(&mut kept, &shape, axis, true, &mut planner);
        }
        for idx in 0..total {
            sol.data[c * total + idx] = buf[idx].re / total as f64;
            src.data[c * total + idx] = kept[idx].re / total as f64;
        }
    }
    Ok((sol, src))
}

fn fft_axis(data: &mut [Complex64], shape: &[usize; 5], axis: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * n * stride + inner;
            for i in 0..n {
                buf[i] = data[base + i * stride];
            }
            plan.process(&mut buf);
            for i in 0..n {
                data[base + i * stride] = buf[i];
            }
        }
    }
}

/// JSON sidecar describing a flat binary grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub axes: Vec<String>,
    pub shape: Vec<usize>,
    pub spacings: Vec<f64>,
    pub origin: Vec<f64>,
    pub components: usize,
    pub endianness: String,
    pub dtype: String,
}

/// Binary payload (little-endian f64) and JSON sidecar for `field`.
pub fn encode_grid(field: &GridField) -> (Vec<u8>, String) {
    let header = GridHeader {
        axes: ["component", "tau", "x0", "x1", "x2", "x3"].iter().map(|s| s.to_string()).collect(),
        shape: vec![field.components, field.tau.n, field.grid.n[0], field.grid.n[1], field.grid.n[2], field.grid.n[3]],
        spacings: vec![field.tau.dtau, field.grid.h[0], field.grid.h[1], field.grid.h[2], field.grid.h[3]],
        origin: vec![field.tau.tau0, field.grid.origin[0], field.grid.origin[1], field.grid.origin[2], field.grid.origin[3]],
        components: field.components,
        endianness: "little".into(),
        dtype: "f64".into(),
    };
    let mut bytes = Vec::with_capacity(field.data.len() * 8);
    for v in &field.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    (bytes, json)
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn write_grid(field: &GridField, stem: &Path) -> Result<()> {
    let (bytes, json) = encode_grid(field);
    std::fs::write(stem.with_extension("bin"), bytes)?;
    std::fs::write(stem.with_extension("json"), json)?;
    Ok(())
}

pub fn read_grid(stem: &Path) -> Result<GridField> {
    let json = std::fs::read_to_string(stem.with_extension("json"))?;
    let h: GridHeader = serde_json::from_str(&json).map_err(|e| Error::Io(e.to_string()))?;
    if h.endianness != "little" || h.dtype != "f64" || h.shape.len() != 6 || h.spacings.len() != 5 || h.origin.len() != 5 {
        return Err(Error::Io("unsupported grid header".into()));
    }
    let grid = Grid4::new(
        [h.shape[2], h.shape[3], h.shape[4], h.shape[5]],
        [h.spacings[1], h.spacings[2], h.spacings[3], h.spacings[4]],
        [h.origin[1], h.origin[2], h.origin[3], h.origin[4]],
    )?;
    let tau = TauAxis::new(h.shape[1], h.spacings[0], h.origin[0])?;
    let bytes = std::fs::read(stem.with_extension("bin"))?;
    let expected = h.components * tau.n * grid.len();
    if bytes.len() != expected * 8 {
        return Err(Error::Io(format!(
            "grid payload has {} bytes, header implies {}",
            bytes.len(),
            expected * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(GridField {
        grid,
        tau,
        components: h.components,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid(h: f64, n: usize) -> Grid4 {
        Grid4::new([4, n, 4, 4], [h; 4], [0.0; 4]).unwrap()
    }

    #[test]
    fn grid_guards() {
        assert!(matches!(Grid4::new([3, 4, 4, 4], [0.1; 4], [0.0; 4]), Err(Error::GridTooSmall { axis: 0, .. })));
        assert!(matches!(TauAxis::from_samples(&[0.0, 0.1, 0.25, 0.3]), Err(Error::NonUniformSampling { .. })));
        let t = TauAxis::from_samples(&[1.0, 1.5, 2.0, 2.5]).unwrap();
        assert_eq!(t.dtau, 0.5);
        assert_eq!(t.tau0, 1.0);
    }

    #[test]
    fn zero_field_zero_residual() {
        let g = small_grid(0.1, 4);
        let t = TauAxis::new(8, 0.1, 0.0).unwrap();
        let z = GridField::zeros(g, t, 5);
        let r = wave_residual(&z, &z, 1.0).unwrap();
        assert_eq!(r.max_interior, 0.0);
        let zm = zero_mode_reduce(&z, &z).unwrap();
        assert!(zm.potential.data.iter().chain(&zm.current.data).all(|&v| v == 0.0));
    }

    #[test]
    fn mode_eigenvalue_examples() {
        assert_eq!(mode_eigenvalue(1.0, 2.0, [0.0, 3.0, 0.0, 0.0]), 13.0);
        assert_eq!(mode_eigenvalue(-1.0, 2.0, [0.0, 0.0, 3.0, 0.0]), 5.0);
        // s = 0 leaves the 4D wave operator
        assert_eq!(mode_eigenvalue(1.0, 0.0, [1.0, 2.0, 0.0, 0.0]), 3.0);
        assert_eq!(mode_eigenvalue(-1.0, 0.0, [1.0, 2.0, 0.0, 0.0]), 3.0);
    }

    #[test]
    fn fourier_round_trip_and_single_mode() {
        let g = small_grid(0.3, 5);
        let t = TauAxis::new(16, 0.25, 0.7).unwrap();
        let s0 = t.frequency(3);
        let two = GridField::sample(g, t, 5, |x, tau| {
            let v = x[1].sin() * (s0 * tau).cos() + 0.5 * x[2] + 0.25 * (t.frequency(1) * tau).sin();
            vec![v, 0.0, -v, 1.0, 2.0 * v]
        });
        let modes = fourier_modes(&two, 1.0).unwrap();
        let back = inverse_modes(&modes, t).unwrap();
        let err = two.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");

        // exp(-i s0 tau) lands on a single mode
        let one = GridField::sample(g, t, 5, |x, tau| {
            let v = 1.0 + x[1];
            vec![v * (s0 * tau).cos(), 0.0, 0.0, 0.0, 0.0]
        });
        let m = fourier_modes(&one, 1.0).unwrap();
        let k = [0usize, 1, 2, 3];
        for (idx, mode) in m.iter().enumerate() {
            let amp = mode.at(0, k).norm();
            let expect = if idx == 3 || idx == 13 { 0.5 * (1.0 + g.point(k)[1]) } else { 0.0 };
            assert!((amp - expect).abs() < 1e-12, "mode {idx}: {amp}");
        }

        // tau-independent field has only the s = 0 mode
        let flat = GridField::sample(g, t, 5, |x, _| vec![x[0], 0.0, 0.0, 0.0, 1.0]);
        let m = fourier_modes(&flat, 1.0).unwrap();
        assert_eq!(m[0].s, 0.0);
        for mode in &m[1..] {
            assert!(mode.amplitude.iter().all(|v| v.norm() < 1e-14));
        }
    }

    #[test]
    fn mode_and_position_residuals_agree() {
        let g = small_grid(0.2, 6);
        let t = TauAxis::new(8, 0.3, 0.0).unwrap();
        let a = GridField::sample(g, t, 5, |x, tau| {
            let w = (x[1] * 1.3 + x[2]).sin() * (2.0 * PI * tau / 2.4).cos();
            vec![w, 0.5 * w, x[3] * w, 0.0, (x[1] - tau).cos()]
        });
        let j = GridField::sample(g, t, 5, |x, tau| vec![x[1] * tau, 0.0, 1.0, 0.0, x[2]]);
        for sigma in [1.0, -1.0] {
            let direct = wave_residual(&a, &j, sigma).unwrap().residual;
            let mut via = mode_space_residual(&a, &j, sigma).unwrap();
            zero_boundary(&mut via);
            let err = direct.data.iter().zip(&via.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn plane_wave_residual_is_second_order() {
        let k = [0.0, 1.1, 0.7, 0.0];
        let sigma = 1.0;
        let t = TauAxis::new(8, 2.0 * PI / 8.0, 0.0).unwrap();
        let s = t.frequency(1);
        let lam = mode_eigenvalue(sigma, s, k);
        let res = |h: f64| {
            let g = Grid4::new([4, 4, 4, 4], [h; 4], [0.1, 0.2, 0.3, 0.4]).unwrap();
            let wave = |x: [f64; 4], tau: f64| (k[1] * x[1] + k[2] * x[2] - s * tau).cos();
            let a = GridField::sample(g, t, 5, |x, tau| vec![0.0, 0.0, 0.0, 0.0, wave(x, tau)]);
            let j = GridField::sample(g, t, 5, |x, tau| vec![0.0, 0.0, 0.0, 0.0, lam * wave(x, tau)]);
            wave_residual(&a, &j, sigma).unwrap().max_interior
        };
        let ratio = res(0.1) / res(0.05);
        assert!((ratio - 4.0).abs() < 0.6, "{ratio}");
    }

    #[test]
    fn mode_residual_with_discrete_symbol_vanishes() {
        let g = Grid4::new([4, 6, 6, 4], [0.2; 4], [0.0; 4]).unwrap();
        let k = [0.0, 2.0, 5.0f64.sqrt(), 0.0];
        let s = 2.0;
        for sigma in [1.0, -1.0] {
            let lam = discrete_mode_eigenvalue(&g, sigma, s, k);
            let phase = |x: [f64; 4]| Complex64::from_polar(1.0, k[1] * x[1] + k[2] * x[2]);
            let a = ModeField::sample(s, sigma, g, 5, |x| vec![phase(x); 5]).unwrap();
            let j = ModeField::sample(s, sigma, g, 5, |x| vec![phase(x) * lam; 5]).unwrap();
            assert!(mode_residual(&a, &j).unwrap().max_interior < 1e-10);
        }
    }

    #[test]
    fn zero_mode_recovers_separable_potential() {
        let g = small_grid(0.25, 5);
        let t = TauAxis::new(201, 0.1, -10.0).unwrap();
        let w = |tau: f64| (-tau * tau / 2.0).exp() / (2.0 * PI).sqrt();
        let amp = |x: [f64; 4]| [1.0 + x[1], x[2] * x[3], -0.5, x[0]];
        let a = GridField::sample(g, t, 5, |x, tau| {
            let a = amp(x);
            vec![a[0] * w(tau), a[1] * w(tau), a[2] * w(tau), a[3] * w(tau), 0.0]
        });
        let zm = zero_mode_reduce(&a, &GridField::zeros(g, t, 5)).unwrap();
        for k in 0..g.len() {
            let i = g.multi(k);
            let expect = amp(g.point(i));
            for c in 0..4 {
                assert!((zm.potential.at(c, i) - expect[c]).abs() < 1e-8);
            }
        }
        let short = TauAxis::new(21, 0.1, -1.0).unwrap();
        let b = GridField::sample(g, short, 5, |_, tau| vec![w(tau); 5]);
        assert!(matches!(zero_mode_reduce(&b, &b), Err(Error::NonConvergentTail { .. })));
    }

    #[test]
    fn conserved_pulse_current_reduces_to_conserved_current() {
        let g = Grid4::new([4, 8, 4, 4], [0.2; 4], [0.0; 4]).unwrap();
        let t = TauAxis::new(161, 0.1, -8.0).unwrap();
        let w = |tau: f64| (-tau * tau / 2.0).exp();
        let dw = |tau: f64| -tau * w(tau);
        let gfun = |x: [f64; 4]| (x[1] * 0.8).sin() + 0.3 * x[2];
        let dg = |x: [f64; 4]| 0.8 * (x[1] * 0.8).cos();
        let hfun = |x: [f64; 4]| x[2] + x[3] * x[1];
        let j = GridField::sample(g, t, 5, |x, tau| {
            vec![hfun(x) * w(tau), -gfun(x) * dw(tau), 0.0, 0.0, dg(x) * w(tau)]
        });
        assert!(current_divergence(&j).unwrap() < 0.05);
        let zm = zero_mode_reduce(&GridField::zeros(g, t, 5), &j).unwrap();
        assert!(zm.continuity < 1e-6, "{}", zm.continuity);
    }

    #[test]
    fn gauge_transform_cases() {
        let g = Grid4::new([5, 5, 5, 4], [0.15, 0.2, 0.2, 0.2], [0.0; 4]).unwrap();
        let t = TauAxis::new(8, 0.25, 0.0).unwrap();
        let a = GridField::sample(g, t, 5, |x, tau| {
            vec![x[1] * x[2], (x[0] + tau).sin(), x[3], 0.3 * x[1] * tau, (x[2] - tau).cos()]
        });
        let c = GridField::sample(g, t, 1, |_, _| vec![2.5]);
        let same = gauge_transform(&a, &c, 1.0).unwrap();
        let err = a.data.iter().zip(&same.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-14);

        let s = t.frequency(1);
        let ks = [1.0, 0.5, 0.0];
        let k0 = discrete_null_frequency(&g, 1.0, ks, s).unwrap();
        let lam = GridField::sample(g, t, 1, |x, tau| {
            vec![(k0 * x[0] + ks[0] * x[1] + ks[1] * x[2] - s * tau).cos()]
        });
        let b = gauge_transform(&a, &lam, 1.0).unwrap();
        assert!(field_strength_change(&a, &b, 1.0).unwrap() <= 1e-10);
        assert!(b.data.iter().zip(&a.data).any(|(x, y)| (x - y).abs() > 1e-3));

        let bad = GridField::sample(g, t, 1, |x, _| vec![(-x[1] * x[1] - x[2] * x[2]).exp()]);
        assert!(matches!(gauge_transform(&a, &bad, 1.0), Err(Error::NotAGaugeFunction { .. })));
    }

    #[test]
    fn gaussian_event_density_solution() {
        let n = 16;
        let g = Grid4::new([4, n, n, n], [0.5, 0.5, 0.5, 0.5], [0.0; 4]).unwrap();
        let t = TauAxis::new(16, 0.5, 0.0).unwrap();
        let c = 0.5 * n as f64 * 0.5;
        let rho = GridField::sample(g, t, 1, |x, tau| {
            let r2 = (x[1] - c).powi(2) + (x[2] - c).powi(2) + (x[3] - c).powi(2) + (tau - 4.0).powi(2);
            vec![(-r2).exp()]
        });
        let (a5, src) = periodic_solve(&rho, 1.0).unwrap();
        let r = wave_residual(&a5, &src, 1.0).unwrap();
        assert!(r.max_interior < 1e-6, "{}", r.max_interior);
        // only the grid mean was removed
        let mean = rho.data.iter().sum::<f64>() / rho.data.len() as f64;
        let diff = rho.data.iter().zip(&src.data).map(|(a, b)| (a - b - mean).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn grid_io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = small_grid(0.1, 4);
        let t = TauAxis::new(4, 0.5, 1.0).unwrap();
        let f = GridField::sample(g, t, 2, |x, tau| vec![x[1] + tau, -x[3]]);
        let stem = dir.path().join("field");
        write_grid(&f, &stem).unwrap();
        assert_eq!(read_grid(&stem).unwrap(), f);
    }
}
