//! Row-major dense helpers for the small (3x3, 4x4) matrices used throughout.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Inverts a row-major `d x d` matrix, rejecting results whose
/// round-trip residual `|A A^-1 - I|` exceeds `1e-8`.
pub fn invert(d: usize, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: d * d,
            got: a.len(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMetric);
    }
    let m = DMatrix::from_row_slice(d, d, a);
    let inv = m.clone().try_inverse().ok_or(Error::SingularMetric)?;
    let check = &m * &inv;
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((check[(i, j)] - target).abs());
        }
    }
    if !worst.is_finite() || worst > 1e-8 {
        return Err(Error::SingularMetric);
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = inv[(i, j)];
        }
    }
    Ok(out)
}

pub fn mat_vec(d: usize, a: &[f64], v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| (0..d).map(|j| a[i * d + j] * v[j]).sum())
        .collect()
}

pub fn mat_mul(d: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// `v^T A w`
pub fn quad_form(d: usize, a: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += v[i] * a[i * d + j] * w[j];
        }
    }
    acc
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invert_diagonal() {
        let inv = invert(3, &[2.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(inv, vec![0.5, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn invert_rejects_singular() {
        assert_eq!(
            invert(2, &[1.0, 2.0, 2.0, 4.0]),
            Err(Error::SingularMetric)
        );
    }
}
