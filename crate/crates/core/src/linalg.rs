//! Small fixed-size linear algebra: 2-vectors, 2x2 matrices, and a cyclic
//! Jacobi eigensolver for the Hermitian matrices built by the existence
//! checker.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2(pub [f64; 2]);

impl Vec2 {
    pub const ZERO: Vec2 = Vec2([0.0; 2]);

    pub fn new(a: f64, b: f64) -> Self {
        Vec2([a, b])
    }

    pub fn max_abs(&self) -> f64 {
        self.0[0].abs().max(self.0[1].abs())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(self, s: f64) -> Self {
        Vec2([self.0[0] * s, self.0[1] * s])
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2([self.0[0] - o.0[0], self.0[1] - o.0[1]])
    }
}

/// Row-major 2x2 real matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0; 2]; 2]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2([[a11, a12], [a21, a22]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    pub fn transpose(&self) -> Self {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn scale(self, s: f64) -> Self {
        let m = self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn determinant(&self) -> f64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = self.0;
        Some(Mat2([[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]).scale(1.0 / det))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_offdiag(&self) -> f64 {
        self.0[0][1].abs().max(self.0[1][0].abs())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + (-o)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

impl Mul<Vec2> for Mat2 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        let a = self.0;
        Vec2([
            a[0][0] * v.0[0] + a[0][1] * v.0[1],
            a[1][0] * v.0[0] + a[1][1] * v.0[1],
        ])
    }
}

/// Complex 2x2 matrix, row-major.
pub type CMat2 = [[Complex64; 2]; 2];

pub fn cmat_from_real(m: Mat2) -> CMat2 {
    let c = |v: f64| Complex64::new(v, 0.0);
    [[c(m.0[0][0]), c(m.0[0][1])], [c(m.0[1][0]), c(m.0[1][1])]]
}

pub fn cmat_mul(a: &CMat2, b: &CMat2) -> CMat2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn cmat_add(a: &CMat2, b: &CMat2) -> CMat2 {
    let mut out = *a;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += b[i][j];
        }
    }
    out
}

/// Conjugate transpose.
pub fn cmat_adjoint(a: &CMat2) -> CMat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

/// Eigenvalues of a real symmetric `n x n` matrix (row-major, consumed) by
/// cyclic Jacobi rotations, sorted ascending.
pub fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a complex Hermitian `n x n` matrix, sorted ascending.
///
/// Uses the real embedding `[[Re, -Im], [Im, Re]]`, whose spectrum is the
/// Hermitian spectrum with every eigenvalue doubled.
pub fn hermitian_eigenvalues(h: &[Complex64], n: usize) -> Vec<f64> {
    assert_eq!(h.len(), n * n);
    let m = 2 * n;
    let mut real = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let z = h[i * n + j];
            real[i * m + j] = z.re;
            real[(i + n) * m + (j + n)] = z.re;
            real[i * m + (j + n)] = -z.im;
            real[(i + n) * m + j] = z.im;
        }
    }
    let ev = symmetric_eigenvalues(real, m);
    ev.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_products() {
        let a = Mat2::new(1.0, 2.0, 3.0, 4.0);
        let b = Mat2::new(0.0, 1.0, -1.0, 0.5);
        assert_eq!(a * b, Mat2::new(-2.0, 2.0, -4.0, 5.0));
        assert_eq!(a * Vec2::new(1.0, -1.0), Vec2::new(-1.0, -1.0));
        let inv = a.inverse().unwrap();
        let id = a * inv;
        assert!((id - Mat2::IDENTITY).max_abs() < 1e-15);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn jacobi_on_known_spectrum() {
        // tridiagonal (2, -1) matrix: eigenvalues 2 - 2cos(k pi / 5)
        let n = 4;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0;
            if i + 1 < n {
                a[i * n + i + 1] = -1.0;
                a[(i + 1) * n + i] = -1.0;
            }
        }
        let ev = symmetric_eigenvalues(a, n);
        for (k, e) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 5.0).cos();
            assert!((e - exact).abs() < 1e-13, "{e} vs {exact}");
        }
    }

    #[test]
    fn hermitian_embedding() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3
        let z = |re, im| Complex64::new(re, im);
        let h = [z(2.0, 0.0), z(0.0, 1.0), z(0.0, -1.0), z(2.0, 0.0)];
        let ev = hermitian_eigenvalues(&h, 2);
        assert!((ev[0] - 1.0).abs() < 1e-13);
        assert!((ev[1] - 3.0).abs() < 1e-13);
    }
}
