//! Prescribed background fields and the metrics built from them.
//!
//! Every field is a function of the coordinates `x^mu` (stored with an
//! upper index, 3 or 4 components) and of the evolution parameter `s`
//! (`t` in the non-relativistic setting, `tau` in the covariant one).
//! Partial derivatives are returned over the combined variable
//! `z = (x^0, .., x^{d-1}, s)`, so a gradient has `d + 1` entries and a
//! Hessian `(d + 1)^2`, row-major.
//!
//! Analytic catalog fields override the derivative methods; anything else
//! falls back to central differences with step `max(1,|z|) eps^(1/3)`
//! (first partials) and nested differences with `max(1,|z|) eps^(1/4)`
//! (second partials).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative guard for turning points: `|shell - U| <= EPS_SING_REL * |shell|` is singular.
pub const EPS_SING_REL: f64 = 1e-9;

/// Relative tolerance used when comparing analytic partials against central differences.
pub const TOL_FD: f64 = 1e-6;

/// Mass, charge and the conserved Hamiltonian value (`E` or `K`) of the particle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParticleParams {
    pub mass: f64,
    pub charge: f64,
    /// `E` for the non-relativistic problem, `K` for the covariant one.
    pub shell: f64,
}

impl ParticleParams {
    pub fn new(mass: f64, charge: f64, shell: f64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive and finite, got {mass}"
            )));
        }
        if !charge.is_finite() || !shell.is_finite() {
            return Err(Error::InvalidParameter(
                "charge and shell value must be finite".into(),
            ));
        }
        Ok(Self {
            mass,
            charge,
            shell,
        })
    }

    /// `e / m`
    pub fn charge_ratio(&self) -> f64 {
        self.charge / self.mass
    }

    pub fn with_shell(self, shell: f64) -> Self {
        Self { shell, ..self }
    }
}

/// Euclidean (`3`) or Minkowski (`4`, signature `(-,+,+,+)`) diagonal.
pub fn signature(dim: usize) -> Vec<f64> {
    match dim {
        4 => vec![-1.0, 1.0, 1.0, 1.0],
        d => vec![1.0; d],
    }
}

pub fn fd_step(v: f64) -> f64 {
    v.abs().max(1.0) * f64::EPSILON.cbrt()
}

pub fn fd_step2(v: f64) -> f64 {
    v.abs().max(1.0) * f64::EPSILON.powf(0.25)
}

fn join(x: &[f64], s: f64) -> Vec<f64> {
    let mut z = x.to_vec();
    z.push(s);
    z
}

fn eval_z<T>(f: &dyn Fn(&[f64], f64) -> T, z: &[f64]) -> T {
    let d = z.len() - 1;
    f(&z[..d], z[d])
}

/// Central-difference gradient over `z = (x, s)`.
pub fn fd_gradient(f: &dyn Fn(&[f64], f64) -> f64, x: &[f64], s: f64) -> Vec<f64> {
    let z = join(x, s);
    let mut g = vec![0.0; z.len()];
    let mut zp = z.clone();
    for i in 0..z.len() {
        let h = fd_step(z[i]);
        zp[i] = z[i] + h;
        let fp = eval_z(f, &zp);
        zp[i] = z[i] - h;
        let fm = eval_z(f, &zp);
        zp[i] = z[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Nested central-difference Hessian over `z = (x, s)`, row-major.
pub fn fd_hessian(f: &dyn Fn(&[f64], f64) -> f64, x: &[f64], s: f64) -> Vec<f64> {
    let z = join(x, s);
    let n = z.len();
    let mut hess = vec![0.0; n * n];
    let f0 = eval_z(f, &z);
    let mut zp = z.clone();
    for i in 0..n {
        let hi = fd_step2(z[i]);
        zp[i] = z[i] + hi;
        let fp = eval_z(f, &zp);
        zp[i] = z[i] - hi;
        let fm = eval_z(f, &zp);
        zp[i] = z[i];
        hess[i * n + i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = fd_step2(z[j]);
            let mut acc = 0.0;
            for (si, sj, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                zp[i] = z[i] + si * hi;
                zp[j] = z[j] + sj * hj;
                acc += w * eval_z(f, &zp);
            }
            zp[i] = z[i];
            zp[j] = z[j];
            let v = acc / (4.0 * hi * hj);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    hess
}

/// A scalar function of `(x, s)`.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64], s: f64) -> f64;

    /// Partials over `(x^0, .., x^{d-1}, s)`.
    fn gradient(&self, x: &[f64], s: f64) -> Vec<f64> {
        fd_gradient(&|x: &[f64], s| self.value(x, s), x, s)
    }

    /// Second partials over `(x, s)`, row-major `(d+1) x (d+1)`.
    fn hessian(&self, x: &[f64], s: f64) -> Vec<f64> {
        fd_hessian(&|x: &[f64], s| self.value(x, s), x, s)
    }

    /// `true` when the field has no explicit `s` dependence.
    fn is_static(&self) -> bool {
        false
    }
}

/// A vector field `A^mu(x, s)` with `dim` components.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64], s: f64) -> Vec<f64>;

    /// Row-major `dim x (dim+1)`: entry `[a][c] = dA^a/dz^c`.
    fn jacobian(&self, x: &[f64], s: f64) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1));
        for a in 0..d {
            out.extend(fd_gradient(&|x: &[f64], s| self.value(x, s)[a], x, s));
        }
        out
    }

    /// `[a][c][e] = d^2 A^a / dz^c dz^e`.
    fn hessians(&self, x: &[f64], s: f64) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1) * (d + 1));
        for a in 0..d {
            out.extend(fd_hessian(&|x: &[f64], s| self.value(x, s)[a], x, s));
        }
        out
    }

    fn is_static(&self) -> bool {
        false
    }
}

/// Identically zero scalar.
#[derive(Debug, Clone)]
pub struct ZeroScalar {
    pub dim: usize,
}

impl ScalarField for ZeroScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64], _s: f64) -> f64 {
        0.0
    }
    fn gradient(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        vec![0.0; self.dim + 1]
    }
    fn hessian(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        vec![0.0; (self.dim + 1) * (self.dim + 1)]
    }
    fn is_static(&self) -> bool {
        true
    }
}

/// `k/2 * sum_{a in axes} (x^a)^2`
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub dim: usize,
    pub k: f64,
    pub axes: Vec<usize>,
}

impl ScalarField for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], _s: f64) -> f64 {
        0.5 * self.k * self.axes.iter().map(|&a| x[a] * x[a]).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], _s: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.dim + 1];
        for &a in &self.axes {
            g[a] = self.k * x[a];
        }
        g
    }
    fn hessian(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        let n = self.dim + 1;
        let mut h = vec![0.0; n * n];
        for &a in &self.axes {
            h[a * n + a] = self.k;
        }
        h
    }
    fn is_static(&self) -> bool {
        true
    }
}

/// `offset + sum_c coeffs[c] z^c` over `z = (x, s)`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub dim: usize,
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl ScalarField for Affine {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], s: f64) -> f64 {
        let mut v = self.offset + self.coeffs[self.dim] * s;
        for (c, xi) in self.coeffs.iter().zip(x) {
            v += c * xi;
        }
        v
    }
    fn gradient(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        self.coeffs.clone()
    }
    fn hessian(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        vec![0.0; (self.dim + 1) * (self.dim + 1)]
    }
    fn is_static(&self) -> bool {
        self.coeffs[self.dim] == 0.0
    }
}

/// `strength / sqrt(sum_{a in axes} (x^a)^2 + softening^2)`
#[derive(Debug, Clone)]
pub struct InverseRadius {
    pub dim: usize,
    pub strength: f64,
    pub axes: Vec<usize>,
    pub softening: f64,
}

impl InverseRadius {
    fn r2(&self, x: &[f64]) -> f64 {
        self.axes.iter().map(|&a| x[a] * x[a]).sum::<f64>() + self.softening * self.softening
    }
}

impl ScalarField for InverseRadius {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], _s: f64) -> f64 {
        self.strength / self.r2(x).sqrt()
    }
    fn gradient(&self, x: &[f64], _s: f64) -> Vec<f64> {
        let r2 = self.r2(x);
        let r3 = r2 * r2.sqrt();
        let mut g = vec![0.0; self.dim + 1];
        for &a in &self.axes {
            g[a] = -self.strength * x[a] / r3;
        }
        g
    }
    fn hessian(&self, x: &[f64], _s: f64) -> Vec<f64> {
        let n = self.dim + 1;
        let r2 = self.r2(x);
        let r = r2.sqrt();
        let r3 = r2 * r;
        let r5 = r3 * r2;
        let mut h = vec![0.0; n * n];
        for &a in &self.axes {
            for &b in &self.axes {
                let delta = if a == b { 1.0 } else { 0.0 };
                h[a * n + b] = self.strength * (3.0 * x[a] * x[b] / r5 - delta / r3);
            }
        }
        h
    }
    fn is_static(&self) -> bool {
        true
    }
}

/// `amplitude * cos(k_mu x^mu - frequency * s + phase)`
#[derive(Debug, Clone)]
pub struct PlaneWave {
    pub dim: usize,
    pub amplitude: f64,
    pub wavevector: Vec<f64>,
    pub frequency: f64,
    pub phase: f64,
}

impl PlaneWave {
    fn theta(&self, x: &[f64], s: f64) -> f64 {
        self.wavevector.iter().zip(x).map(|(k, x)| k * x).sum::<f64>() - self.frequency * s
            + self.phase
    }
    fn q(&self) -> Vec<f64> {
        let mut q = self.wavevector.clone();
        q.push(-self.frequency);
        q
    }
}

impl ScalarField for PlaneWave {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], s: f64) -> f64 {
        self.amplitude * self.theta(x, s).cos()
    }
    fn gradient(&self, x: &[f64], s: f64) -> Vec<f64> {
        let sn = -self.amplitude * self.theta(x, s).sin();
        self.q().into_iter().map(|q| sn * q).collect()
    }
    fn hessian(&self, x: &[f64], s: f64) -> Vec<f64> {
        let c = -self.amplitude * self.theta(x, s).cos();
        let q = self.q();
        let n = q.len();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = c * q[i] * q[j];
            }
        }
        h
    }
    fn is_static(&self) -> bool {
        self.frequency == 0.0
    }
}

/// Weighted sum of scalar fields.
#[derive(Clone)]
pub struct ScalarSum {
    pub dim: usize,
    pub terms: Vec<(f64, Arc<dyn ScalarField>)>,
}

impl ScalarField for ScalarSum {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], s: f64) -> f64 {
        self.terms.iter().map(|(w, f)| w * f.value(x, s)).sum()
    }
    fn gradient(&self, x: &[f64], s: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.dim + 1];
        for (w, f) in &self.terms {
            for (gi, fi) in g.iter_mut().zip(f.gradient(x, s)) {
                *gi += w * fi;
            }
        }
        g
    }
    fn hessian(&self, x: &[f64], s: f64) -> Vec<f64> {
        let n = self.dim + 1;
        let mut h = vec![0.0; n * n];
        for (w, f) in &self.terms {
            for (hi, fi) in h.iter_mut().zip(f.hessian(x, s)) {
                *hi += w * fi;
            }
        }
        h
    }
    fn is_static(&self) -> bool {
        self.terms.iter().all(|(_, f)| f.is_static())
    }
}

type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;

/// Closure-backed scalar field; derivatives by central differences.
pub struct FnScalar {
    pub dim: usize,
    f: Box<ScalarFn>,
}

impl FnScalar {
    pub fn new(dim: usize, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Box::new(f),
        }
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], s: f64) -> f64 {
        (self.f)(x, s)
    }
}

impl fmt::Debug for FnScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnScalar(dim={})", self.dim)
    }
}

/// `A^a = offset^a + sum_c matrix[a][c] z^c`; covers uniform magnetic and
/// `s`-linear potentials.
#[derive(Debug, Clone)]
pub struct AffineVector {
    pub dim: usize,
    /// Row-major `dim x (dim+1)`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineVector {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            matrix: vec![0.0; dim * (dim + 1)],
            offset: vec![0.0; dim],
        }
    }

    /// Symmetric gauge `A = (B x r) / 2` on the last three coordinates.
    pub fn uniform_magnetic(dim: usize, b: [f64; 3]) -> Self {
        let mut out = Self::zero(dim);
        let o = dim - 3;
        let n = dim + 1;
        // A_x = (b_y z - b_z y)/2, A_y = (b_z x - b_x z)/2, A_z = (b_x y - b_y x)/2
        let mut set = |a: usize, c: usize, v: f64| out.matrix[(o + a) * n + o + c] = v;
        set(0, 2, 0.5 * b[1]);
        set(0, 1, -0.5 * b[2]);
        set(1, 0, 0.5 * b[2]);
        set(1, 2, -0.5 * b[0]);
        set(2, 1, 0.5 * b[0]);
        set(2, 0, -0.5 * b[1]);
        out
    }
}

impl VectorField for AffineVector {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], s: f64) -> Vec<f64> {
        let n = self.dim + 1;
        (0..self.dim)
            .map(|a| {
                let row = &self.matrix[a * n..(a + 1) * n];
                self.offset[a] + row[..self.dim].iter().zip(x).map(|(m, x)| m * x).sum::<f64>()
                    + row[self.dim] * s
            })
            .collect()
    }
    fn jacobian(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        self.matrix.clone()
    }
    fn hessians(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        vec![0.0; self.dim * (self.dim + 1) * (self.dim + 1)]
    }
    fn is_static(&self) -> bool {
        let n = self.dim + 1;
        (0..self.dim).all(|a| self.matrix[a * n + self.dim] == 0.0)
    }
}

/// Closure-backed vector field; derivatives by central differences.
pub struct FnVector {
    pub dim: usize,
    f: Box<VectorFn>,
}

impl FnVector {
    pub fn new(dim: usize, f: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Box::new(f),
        }
    }
}

impl VectorField for FnVector {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], s: f64) -> Vec<f64> {
        (self.f)(x, s)
    }
}

/// Electromagnetic background: scalar part (`A^0` in 3D, `a_5` in 4D) and
/// vector part (`A^i` or `a^mu`).
#[derive(Clone)]
pub struct Gauge {
    pub scalar: Arc<dyn ScalarField>,
    pub vector: Arc<dyn VectorField>,
}

/// Non-relativistic gauge field `(A^0, A^i)`.
pub type Gauge3 = Gauge;
/// Covariant gauge field `(a^mu, a_5)`.
pub type Gauge5 = Gauge;

impl Gauge {
    pub fn new(scalar: Arc<dyn ScalarField>, vector: Arc<dyn VectorField>) -> Result<Self> {
        if scalar.dim() != vector.dim() {
            return Err(Error::DimensionMismatch {
                what: "gauge scalar vs vector",
                expected: vector.dim(),
                got: scalar.dim(),
            });
        }
        Ok(Self { scalar, vector })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            scalar: Arc::new(ZeroScalar { dim }),
            vector: Arc::new(AffineVector::zero(dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }

    pub fn is_static(&self) -> bool {
        self.scalar.is_static() && self.vector.is_static()
    }
}

impl fmt::Debug for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gauge(dim={})", self.dim())
    }
}

/// Antisymmetric field tensor plus the fifth row.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStrength {
    pub dim: usize,
    /// `F^{lk} = dA^k/dx_l - dA^l/dx_k`, row-major.
    pub f: Vec<f64>,
    /// `f^rho_5 = dA^rho/ds - eta^{rho nu} d(scalar)/dx^nu`.
    pub fifth: Vec<f64>,
}

impl FieldStrength {
    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.f[l * self.dim + k]
    }
}

/// Builds `F^{lk}` and the fifth row from the gauge partials at `(x, s)`.
///
/// Derivatives with a lower coordinate index are `d/dx_l = eta^{ll} d/dx^l`.
pub fn field_strength(gauge: &Gauge, x: &[f64], s: f64) -> Result<FieldStrength> {
    let d = gauge.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "point",
            expected: d,
            got: x.len(),
        });
    }
    let n = d + 1;
    let sig = signature(d);
    let jac = gauge.vector.jacobian(x, s);
    let grad = gauge.scalar.gradient(x, s);
    let mut f = vec![0.0; d * d];
    for l in 0..d {
        for k in (l + 1)..d {
            let v = sig[l] * jac[k * n + l] - sig[k] * jac[l * n + k];
            f[l * d + k] = v;
            f[k * d + l] = -v;
        }
    }
    let fifth = (0..d).map(|r| jac[r * n + d] - sig[r] * grad[r]).collect();
    Ok(FieldStrength { dim: d, f, fifth })
}

/// Where the conformal factor takes its scalar from.
#[derive(Clone)]
pub enum ConformalSource {
    /// `shell / (shell - V)`
    Potential(Arc<dyn ScalarField>),
    /// `shell / (shell + e * phi)` with `phi = A^0` or `a_5`.
    GaugeScalar(Arc<dyn ScalarField>),
}

impl ConformalSource {
    fn dim(&self) -> usize {
        match self {
            ConformalSource::Potential(v) | ConformalSource::GaugeScalar(v) => v.dim(),
        }
    }

    /// The effective potential `U` with `g = shell/(shell - U) * eta`.
    pub fn effective_potential(&self, charge: f64) -> Arc<dyn ScalarField> {
        match self {
            ConformalSource::Potential(v) => v.clone(),
            ConformalSource::GaugeScalar(phi) => Arc::new(ScalarSum {
                dim: phi.dim(),
                terms: vec![(-charge, phi.clone())],
            }),
        }
    }
}

/// Value, first and second partials of a symmetric `d x d` matrix field
/// with respect to `(x, s)`.
#[derive(Debug, Clone)]
pub struct MatrixJet {
    pub dim: usize,
    pub value: Vec<f64>,
    /// `[c][i][j]`
    pub grad: Vec<f64>,
    /// `[c][e][i][j]`
    pub hess: Vec<f64>,
}

/// Base (un-extended) dual metric, described through its inverse `g^{ij}`.
pub trait BaseMetric: Send + Sync {
    fn dim(&self) -> usize;

    fn signature(&self) -> Vec<f64> {
        signature(self.dim())
    }

    /// `g^{ij}` with partials over `(x, s)`.
    fn inverse_jet(&self, x: &[f64], s: f64) -> Result<MatrixJet>;

    /// `g^{ij}` alone.
    fn inverse(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        Ok(self.inverse_jet(x, s)?.value)
    }

    /// `g_{ij}`.
    fn lower(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        linalg::invert(self.dim(), &self.inverse(x, s)?)
    }

    /// `phi` when `g_{ij} = phi * eta_{ij}`.
    fn conformal_factor(&self, _x: &[f64], _s: f64) -> Option<Result<f64>> {
        None
    }

    fn is_static(&self) -> bool {
        false
    }
}

/// `g_{ij} = shell / (shell - U) * eta_{ij}`.
#[derive(Clone)]
pub struct ConformalMetric {
    dim: usize,
    shell: f64,
    potential: Arc<dyn ScalarField>,
}

impl ConformalMetric {
    /// Conformal metric from an effective potential `U`.
    pub fn new(shell: f64, potential: Arc<dyn ScalarField>) -> Result<Self> {
        if !shell.is_finite() || shell == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "conformal shell value must be finite and non-zero, got {shell}"
            )));
        }
        Ok(Self {
            dim: potential.dim(),
            shell,
            potential,
        })
    }

    pub fn from_source(params: &ParticleParams, source: &ConformalSource) -> Result<Self> {
        Self::new(params.shell, source.effective_potential(params.charge))
    }

    pub fn shell(&self) -> f64 {
        self.shell
    }

    pub fn potential(&self) -> &Arc<dyn ScalarField> {
        &self.potential
    }

    fn inverse_factor(&self, x: &[f64], s: f64) -> Result<f64> {
        let u = self.potential.value(x, s);
        let gap = (self.shell - u).abs();
        let threshold = EPS_SING_REL * self.shell.abs();
        if !(gap > threshold) {
            return Err(Error::SingularConformalFactor { s, gap, threshold });
        }
        Ok((self.shell - u) / self.shell)
    }
}

impl BaseMetric for ConformalMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inverse_jet(&self, x: &[f64], s: f64) -> Result<MatrixJet> {
        let d = self.dim;
        let n = d + 1;
        let sig = signature(d);
        let h = self.inverse_factor(x, s)?;
        let gu = self.potential.gradient(x, s);
        let hu = self.potential.hessian(x, s);
        let mut value = vec![0.0; d * d];
        let mut grad = vec![0.0; n * d * d];
        let mut hess = vec![0.0; n * n * d * d];
        for i in 0..d {
            value[i * d + i] = h * sig[i];
            for c in 0..n {
                grad[(c * d + i) * d + i] = -gu[c] / self.shell * sig[i];
                for e in 0..n {
                    hess[((c * n + e) * d + i) * d + i] = -hu[c * n + e] / self.shell * sig[i];
                }
            }
        }
        Ok(MatrixJet {
            dim: d,
            value,
            grad,
            hess,
        })
    }

    fn conformal_factor(&self, x: &[f64], s: f64) -> Option<Result<f64>> {
        Some(self.inverse_factor(x, s).map(|h| 1.0 / h))
    }

    fn is_static(&self) -> bool {
        self.potential.is_static()
    }
}

/// Position- and time-independent symmetric metric.
#[derive(Debug, Clone)]
pub struct ConstantMetric {
    dim: usize,
    lower: Vec<f64>,
    inverse: Vec<f64>,
}

impl ConstantMetric {
    pub fn new(dim: usize, lower: Vec<f64>) -> Result<Self> {
        for i in 0..dim {
            for j in 0..i {
                if lower[i * dim + j] != lower[j * dim + i] {
                    return Err(Error::InvalidParameter("metric must be symmetric".into()));
                }
            }
        }
        let inverse = linalg::invert(dim, &lower)?;
        Ok(Self {
            dim,
            lower,
            inverse,
        })
    }

    pub fn flat(dim: usize) -> Self {
        let mut lower = vec![0.0; dim * dim];
        for (i, s) in signature(dim).into_iter().enumerate() {
            lower[i * dim + i] = s;
        }
        Self {
            dim,
            inverse: lower.clone(),
            lower,
        }
    }
}

impl BaseMetric for ConstantMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn inverse_jet(&self, _x: &[f64], _s: f64) -> Result<MatrixJet> {
        let d = self.dim;
        let n = d + 1;
        Ok(MatrixJet {
            dim: d,
            value: self.inverse.clone(),
            grad: vec![0.0; n * d * d],
            hess: vec![0.0; n * n * d * d],
        })
    }
    fn lower(&self, _x: &[f64], _s: f64) -> Result<Vec<f64>> {
        Ok(self.lower.clone())
    }
    fn is_static(&self) -> bool {
        true
    }
}

type MatrixFn = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;

/// Closure returning the lower metric `g_{ij}(x, s)`; the inverse and its
/// partials come from inversion and central differences.
pub struct FnMetric {
    dim: usize,
    lower: Box<MatrixFn>,
}

impl FnMetric {
    pub fn new(dim: usize, lower: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            lower: Box::new(lower),
        }
    }

    fn inverse_at(&self, z: &[f64]) -> Result<Vec<f64>> {
        linalg::invert(self.dim, &(self.lower)(&z[..self.dim], z[self.dim]))
    }
}

impl BaseMetric for FnMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inverse_jet(&self, x: &[f64], s: f64) -> Result<MatrixJet> {
        let d = self.dim;
        let n = d + 1;
        let dd = d * d;
        let z = join(x, s);
        let value = self.inverse_at(&z)?;
        let mut grad = vec![0.0; n * dd];
        let mut hess = vec![0.0; n * n * dd];
        let mut zp = z.clone();
        for c in 0..n {
            let h = fd_step(z[c]);
            zp[c] = z[c] + h;
            let p = self.inverse_at(&zp)?;
            zp[c] = z[c] - h;
            let m = self.inverse_at(&zp)?;
            zp[c] = z[c];
            for k in 0..dd {
                grad[c * dd + k] = (p[k] - m[k]) / (2.0 * h);
            }
        }
        for c in 0..n {
            let hc = fd_step2(z[c]);
            zp[c] = z[c] + hc;
            let p = self.inverse_at(&zp)?;
            zp[c] = z[c] - hc;
            let m = self.inverse_at(&zp)?;
            zp[c] = z[c];
            for k in 0..dd {
                hess[(c * n + c) * dd + k] = (p[k] - 2.0 * value[k] + m[k]) / (hc * hc);
            }
            for e in (c + 1)..n {
                let he = fd_step2(z[e]);
                let mut acc = vec![0.0; dd];
                for (sc, se, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    zp[c] = z[c] + sc * hc;
                    zp[e] = z[e] + se * he;
                    let v = self.inverse_at(&zp)?;
                    for k in 0..dd {
                        acc[k] += w * v[k];
                    }
                }
                zp[c] = z[c];
                zp[e] = z[e];
                for k in 0..dd {
                    let v = acc[k] / (4.0 * hc * he);
                    hess[(c * n + e) * dd + k] = v;
                    hess[(e * n + c) * dd + k] = v;
                }
            }
        }
        Ok(MatrixJet {
            dim: d,
            value,
            grad,
            hess,
        })
    }

    fn lower(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        Ok((self.lower)(x, s))
    }
}

fn conformal_at(
    params: &ParticleParams,
    source: &ConformalSource,
    x: &[f64],
    s: f64,
    dim: usize,
) -> Result<Vec<f64>> {
    if source.dim() != dim || x.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "conformal metric point",
            expected: dim,
            got: x.len().min(source.dim()),
        });
    }
    let metric = ConformalMetric::from_source(params, source)?;
    let phi = metric
        .conformal_factor(x, s)
        .expect("conformal metric always has a factor")?;
    let sig = signature(dim);
    let mut g = vec![0.0; dim * dim];
    for i in 0..dim {
        g[i * dim + i] = phi * sig[i];
    }
    Ok(g)
}

/// `g_{ij} = E/(E - V) delta_{ij}` or `E/(E + e A^0) delta_{ij}` at `(x, t)`.
pub fn conformal_metric_nr(
    params: &ParticleParams,
    source: &ConformalSource,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    conformal_at(params, source, x, t, 3)
}

/// `g_{mu nu} = K/(K - V) eta_{mu nu}` or `K/(K + e a_5) eta_{mu nu}` at `(x, tau)`.
pub fn conformal_metric_rel(
    params: &ParticleParams,
    source: &ConformalSource,
    x: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    conformal_at(params, source, x, tau, 4)
}

/// Derivative data of the extended inverse metric at a point.
///
/// Extended indices run over `0..=d`; index `d` is the evolution slot
/// (`4` in the 3D theory, `5` in the 4D one). The extended inverse is
/// `G^{ij} = g^{ij}`, `G^{i d} = (e/m) A^i`, `G^{d d} = corner`.
/// Derivative slots `c < d` are lower-index derivatives `d/dx_c`;
/// slot `d` is `d/ds`.
#[derive(Debug, Clone)]
pub struct ExtendedJet {
    pub dim: usize,
    pub signature: Vec<f64>,
    /// `g_{ij}`
    pub lower: Vec<f64>,
    /// `g^{ij}`
    pub inverse: Vec<f64>,
    /// `[A][B]`, `(d+1)^2`
    pub ext: Vec<f64>,
    /// `[c][A][B]`
    pub d_ext: Vec<f64>,
    /// `[c][e][A][B]`
    pub dd_ext: Vec<f64>,
    /// `d g^{ij} / dz^c` over the upper-index coordinates, `[c][i][j]`.
    pub d_inverse_upper: Vec<f64>,
}

impl ExtendedJet {
    #[inline]
    pub fn n(&self) -> usize {
        self.dim + 1
    }
    #[inline]
    pub fn ext_at(&self, a: usize, b: usize) -> f64 {
        self.ext[a * self.n() + b]
    }
    #[inline]
    pub fn d_ext_at(&self, c: usize, a: usize, b: usize) -> f64 {
        let n = self.n();
        self.d_ext[(c * n + a) * n + b]
    }
    #[inline]
    pub fn dd_ext_at(&self, c: usize, e: usize, a: usize, b: usize) -> f64 {
        let n = self.n();
        self.dd_ext[((c * n + e) * n + a) * n + b]
    }
    #[inline]
    pub fn lower_at(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `d g_{ij} / dx^c` (upper-index coordinate), `c < d` or `c = d` for `s`.
    pub fn d_lower_upper(&self, c: usize) -> Vec<f64> {
        let d = self.dim;
        let dg = &self.d_inverse_upper[c * d * d..(c + 1) * d * d];
        let tmp = linalg::mat_mul(d, &self.lower, dg);
        linalg::mat_mul(d, &tmp, &self.lower)
            .into_iter()
            .map(|v| -v)
            .collect()
    }
}

/// Dual metric plus its Kaluza-Klein row `g^{4i} = (e/m) A^i` (or
/// `g^{5 mu} = (e/m) a^mu`) and a constant corner `g^{44}`/`g^{55}`.
#[derive(Clone)]
pub struct ExtendedMetric {
    base: Arc<dyn BaseMetric>,
    gauge_row: Option<Arc<dyn VectorField>>,
    charge_ratio: f64,
    corner: f64,
}

impl fmt::Debug for ExtendedMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExtendedMetric")
            .field("dim", &self.dim())
            .field("charge_ratio", &self.charge_ratio)
            .field("corner", &self.corner)
            .field("has_gauge_row", &self.gauge_row.is_some())
            .finish()
    }
}

/// Attaches the gauge row and corner to a base metric.
pub fn extend_metric(
    base: Arc<dyn BaseMetric>,
    gauge: Option<Arc<dyn VectorField>>,
    params: &ParticleParams,
    corner: f64,
) -> Result<ExtendedMetric> {
    let d = base.dim();
    if d != 3 && d != 4 {
        return Err(Error::DimensionMismatch {
            what: "metric dimension (3 or 4)",
            expected: 4,
            got: d,
        });
    }
    if let Some(g) = &gauge {
        if g.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "gauge row",
                expected: d,
                got: g.dim(),
            });
        }
    }
    if !corner.is_finite() {
        return Err(Error::InvalidParameter("corner must be finite".into()));
    }
    Ok(ExtendedMetric {
        base,
        gauge_row: gauge,
        charge_ratio: params.charge_ratio(),
        corner,
    })
}

impl ExtendedMetric {
    /// Base metric without a gauge row.
    pub fn pure(base: Arc<dyn BaseMetric>) -> Self {
        Self {
            base,
            gauge_row: None,
            charge_ratio: 0.0,
            corner: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &Arc<dyn BaseMetric> {
        &self.base
    }

    pub fn charge_ratio(&self) -> f64 {
        self.charge_ratio
    }

    pub fn corner(&self) -> f64 {
        self.corner
    }

    pub fn gauge_vector(&self) -> Option<&Arc<dyn VectorField>> {
        self.gauge_row.as_ref()
    }

    pub fn is_static(&self) -> bool {
        self.base.is_static() && self.gauge_row.as_ref().is_none_or(|g| g.is_static())
    }

    /// `(e/m) A^i` at `(x, s)`.
    pub fn gauge_row(&self, x: &[f64], s: f64) -> Vec<f64> {
        match &self.gauge_row {
            Some(g) => g.value(x, s).into_iter().map(|a| self.charge_ratio * a).collect(),
            None => vec![0.0; self.dim()],
        }
    }

    /// Partials of the corner; identically zero because the corner is constant.
    pub fn corner_gradient(&self, _x: &[f64], _s: f64) -> Vec<f64> {
        vec![0.0; self.dim() + 1]
    }

    pub fn lower(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        self.base.lower(x, s)
    }

    pub fn inverse(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        self.base.inverse(x, s)
    }

    pub fn conformal_factor(&self, x: &[f64], s: f64) -> Option<Result<f64>> {
        self.base.conformal_factor(x, s)
    }

    pub fn jet(&self, x: &[f64], s: f64) -> Result<ExtendedJet> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: d,
                got: x.len(),
            });
        }
        let n = d + 1;
        let sig = self.base.signature();
        // lowered-index derivative factor per slot
        let dsig = |c: usize| if c < d { sig[c] } else { 1.0 };
        let inv = self.base.inverse_jet(x, s)?;
        let lower = linalg::invert(d, &inv.value)?;

        let (w, dw, ddw) = match &self.gauge_row {
            Some(g) => {
                let k = self.charge_ratio;
                (
                    g.value(x, s).into_iter().map(|v| k * v).collect::<Vec<_>>(),
                    g.jacobian(x, s).into_iter().map(|v| k * v).collect::<Vec<_>>(),
                    g.hessians(x, s).into_iter().map(|v| k * v).collect::<Vec<_>>(),
                )
            }
            None => (vec![0.0; d], vec![0.0; d * n], vec![0.0; d * n * n]),
        };

        let mut ext = vec![0.0; n * n];
        let mut d_ext = vec![0.0; n * n * n];
        let mut dd_ext = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                ext[a * n + b] = match (a < d, b < d) {
                    (true, true) => inv.value[a * d + b],
                    (true, false) => w[a],
                    (false, true) => w[b],
                    (false, false) => self.corner,
                };
                for c in 0..n {
                    let raw = match (a < d, b < d) {
                        (true, true) => inv.grad[(c * d + a) * d + b],
                        (true, false) => dw[a * n + c],
                        (false, true) => dw[b * n + c],
                        (false, false) => 0.0,
                    };
                    d_ext[(c * n + a) * n + b] = dsig(c) * raw;
                    for e in 0..n {
                        let raw2 = match (a < d, b < d) {
                            (true, true) => inv.hess[((c * n + e) * d + a) * d + b],
                            (true, false) => ddw[(a * n + c) * n + e],
                            (false, true) => ddw[(b * n + c) * n + e],
                            (false, false) => 0.0,
                        };
                        dd_ext[((c * n + e) * n + a) * n + b] = dsig(c) * dsig(e) * raw2;
                    }
                }
            }
        }
        Ok(ExtendedJet {
            dim: d,
            signature: sig,
            lower,
            inverse: inv.value,
            ext,
            d_ext,
            dd_ext,
            d_inverse_upper: inv.grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(m: f64, e: f64, shell: f64) -> ParticleParams {
        ParticleParams::new(m, e, shell).unwrap()
    }

    fn harmonic3() -> Arc<dyn ScalarField> {
        Arc::new(Quadratic {
            dim: 3,
            k: 1.0,
            axes: vec![0, 1, 2],
        })
    }

    fn constant(dim: usize, v: f64) -> Arc<dyn ScalarField> {
        let mut coeffs = vec![0.0; dim + 1];
        coeffs[0] = 0.0;
        Arc::new(Affine {
            dim,
            coeffs,
            offset: v,
        })
    }

    #[test]
    fn nr_conformal_metric_examples() {
        let g = conformal_metric_nr(
            &params(1.0, 1.0, 2.0),
            &ConformalSource::Potential(constant(3, 1.0)),
            &[0.3, -0.2, 0.9],
            0.0,
        )
        .unwrap();
        assert_eq!(g, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);

        let g = conformal_metric_nr(
            &params(1.0, 1.0, 3.7),
            &ConformalSource::Potential(Arc::new(ZeroScalar { dim: 3 })),
            &[1.0, 2.0, 3.0],
            0.0,
        )
        .unwrap();
        assert_eq!(g, linalg::identity(3));

        let err = conformal_metric_nr(
            &params(1.0, 1.0, 1.0),
            &ConformalSource::Potential(constant(3, 1.0 - 1e-12)),
            &[0.0; 3],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularConformalFactor { .. }));
    }

    #[test]
    fn rel_conformal_metric_examples() {
        let eta = signature(4);
        let g = conformal_metric_rel(
            &params(1.0, 1.0, -0.5),
            &ConformalSource::GaugeScalar(Arc::new(ZeroScalar { dim: 4 })),
            &[0.1, 0.2, 0.3, 0.4],
            0.0,
        )
        .unwrap();
        for i in 0..4 {
            assert_eq!(g[i * 4 + i], eta[i]);
        }
        let g = conformal_metric_rel(
            &params(1.0, 1.0, 1.0),
            &ConformalSource::GaugeScalar(constant(4, 1.0)),
            &[0.0; 4],
            0.0,
        )
        .unwrap();
        for i in 0..4 {
            assert_eq!(g[i * 4 + i], 0.5 * eta[i]);
        }
        let err = conformal_metric_rel(
            &params(1.0, 1.0, 1.0),
            &ConformalSource::GaugeScalar(constant(4, -1.0 + 1e-12)),
            &[0.0; 4],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularConformalFactor { .. }));
    }

    #[test]
    fn potential_and_gauge_forms_coincide_when_v_is_minus_e_a0() {
        let e = 0.7;
        let p = params(1.3, e, 2.5);
        let a0: Arc<dyn ScalarField> = Arc::new(InverseRadius {
            dim: 3,
            strength: 0.4,
            axes: vec![0, 1, 2],
            softening: 0.2,
        });
        let v: Arc<dyn ScalarField> = Arc::new(ScalarSum {
            dim: 3,
            terms: vec![(-e, a0.clone())],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g1 = conformal_metric_nr(&p, &ConformalSource::Potential(v.clone()), &x, 0.0).unwrap();
            let g2 = conformal_metric_nr(&p, &ConformalSource::GaugeScalar(a0.clone()), &x, 0.0).unwrap();
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn conformal_reciprocity() {
        let m = ConformalMetric::new(1.0, harmonic3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect();
            let g = m.lower(&x, 0.0).unwrap();
            let gi = m.inverse(&x, 0.0).unwrap();
            let prod = linalg::mat_mul(3, &g, &gi);
            assert!(linalg::max_abs_diff(&prod, &linalg::identity(3)) < 1e-12);
        }
    }

    #[test]
    fn field_strength_uniform_b() {
        let gauge = Gauge::new(
            Arc::new(ZeroScalar { dim: 3 }),
            Arc::new(AffineVector::uniform_magnetic(3, [0.0, 0.0, 2.0])),
        )
        .unwrap();
        let f = field_strength(&gauge, &[0.3, 0.4, -1.0], 0.0).unwrap();
        assert_eq!(f.get(0, 1), 2.0);
        assert_eq!(f.get(1, 0), -2.0);
        for (l, k) in [(0, 2), (2, 0), (1, 2), (2, 1), (0, 0)] {
            assert_eq!(f.get(l, k), 0.0);
        }
    }

    #[test]
    fn field_strength_constant_potential_vanishes() {
        let gauge = Gauge::new(
            Arc::new(ZeroScalar { dim: 4 }),
            Arc::new(AffineVector {
                dim: 4,
                matrix: vec![0.0; 20],
                offset: vec![1.0, -2.0, 0.5, 3.0],
            }),
        )
        .unwrap();
        let f = field_strength(&gauge, &[0.1, 0.2, 0.3, 0.4], 1.0).unwrap();
        assert!(f.f.iter().all(|&v| v == 0.0));
        assert!(f.fifth.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_strength_quadratic_component_matches_central_difference() {
        // A = (y^2, 0, 0): F^{21} = dA^1/dx_2 = 2y, F^{12} = -2y
        let gauge = Gauge::new(
            Arc::new(ZeroScalar { dim: 3 }),
            Arc::new(FnVector::new(3, |x, _| vec![x[1] * x[1], 0.0, 0.0])),
        )
        .unwrap();
        let f = field_strength(&gauge, &[0.4, 1.0, -0.3], 0.0).unwrap();
        assert!((f.get(1, 0) - 2.0).abs() < 1e-8);
        assert!((f.get(0, 1) + 2.0).abs() < 1e-8);
        assert_eq!(f.get(0, 1), -f.get(1, 0));
    }

    #[test]
    fn extend_metric_examples() {
        let p = params(1.0, 2.0, 1.0);
        let flat: Arc<dyn BaseMetric> = Arc::new(ConstantMetric::flat(3));
        let em = extend_metric(flat.clone(), None, &p, 0.0).unwrap();
        assert_eq!(em.gauge_row(&[1.0, 2.0, 3.0], 0.0), vec![0.0; 3]);

        let a: Arc<dyn VectorField> = Arc::new(AffineVector {
            dim: 3,
            matrix: vec![0.0; 12],
            offset: vec![1.0, 0.0, 0.0],
        });
        let em = extend_metric(flat.clone(), Some(a), &p, 0.0).unwrap();
        assert_eq!(em.gauge_row(&[0.5, 0.5, 0.5], 0.0), vec![2.0, 0.0, 0.0]);

        let em = extend_metric(flat.clone(), None, &p, 0.7).unwrap();
        let jet = em.jet(&[0.1, 0.2, 0.3], 0.0).unwrap();
        assert_eq!(jet.ext_at(3, 3), 0.7);
        for c in 0..4 {
            assert_eq!(jet.d_ext_at(c, 3, 3), 0.0);
        }
        assert_eq!(em.corner_gradient(&[0.0; 3], 0.0), vec![0.0; 4]);

        let a4: Arc<dyn VectorField> = Arc::new(AffineVector::zero(4));
        assert!(matches!(
            extend_metric(flat, Some(a4), &p, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn analytic_partials_agree_with_central_differences() {
        let fields: Vec<Arc<dyn ScalarField>> = vec![
            harmonic3(),
            Arc::new(InverseRadius {
                dim: 3,
                strength: -1.3,
                axes: vec![0, 1, 2],
                softening: 0.1,
            }),
            Arc::new(PlaneWave {
                dim: 4,
                amplitude: 0.3,
                wavevector: vec![0.5, 1.0, -0.7, 0.2],
                frequency: 0.9,
                phase: 0.1,
            }),
            Arc::new(Affine {
                dim: 4,
                coeffs: vec![0.1, 0.2, 0.3, 0.4, 0.5],
                offset: 1.0,
            }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for f in &fields {
            let d = f.dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..1.5)).collect();
                let s = rng.gen_range(-1.0..1.0);
                let g = f.gradient(&x, s);
                let gfd = fd_gradient(&|x: &[f64], s| f.value(x, s), &x, s);
                for (a, b) in g.iter().zip(&gfd) {
                    assert!(rel_err(*a, *b) < TOL_FD, "{a} vs {b}");
                }
                let h = f.hessian(&x, s);
                let hfd = fd_hessian(&|x: &[f64], s| f.value(x, s), &x, s);
                for (a, b) in h.iter().zip(&hfd) {
                    assert!(rel_err(*a, *b) < 1e-5, "{a} vs {b}");
                }
            }
        }
        let a = AffineVector::uniform_magnetic(4, [0.3, -1.0, 2.0]);
        let x = [0.1, 0.2, 0.3, 0.4];
        let jac = a.jacobian(&x, 0.0);
        for comp in 0..4 {
            let gfd = fd_gradient(&|x: &[f64], s| a.value(x, s)[comp], &x, 0.0);
            for c in 0..5 {
                assert!(rel_err(jac[comp * 5 + c], gfd[c]) < TOL_FD);
            }
        }
    }

    #[test]
    fn uniform_magnetic_gauge_is_curl_consistent() {
        let b = [0.3, -1.0, 2.0];
        let g = Gauge::new(
            Arc::new(ZeroScalar { dim: 3 }),
            Arc::new(AffineVector::uniform_magnetic(3, b)),
        )
        .unwrap();
        let f = field_strength(&g, &[0.0; 3], 0.0).unwrap();
        // F^{lk} = eps_{lkm} B_m
        assert!((f.get(0, 1) - b[2]).abs() < 1e-15);
        assert!((f.get(1, 2) - b[0]).abs() < 1e-15);
        assert!((f.get(2, 0) - b[1]).abs() < 1e-15);
    }
}
