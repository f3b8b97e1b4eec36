//! Fixed-size 3×3 linear algebra.
//!
//! Every matrix in the estimation code is 3×3 (one row/column per
//! parameter), so a plain array-backed type beats pulling in a general
//! n×n library.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl Matrix3 {
    pub const ZERO: Matrix3 = Matrix3([[0.0; 3]; 3]);

    pub fn identity() -> Self {
        Self::diag([1.0, 1.0, 1.0])
    }

    pub fn diag(d: Vec3) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            m.0[i][i] = d[i];
        }
        m
    }

    pub fn from_row_major(v: [f64; 9]) -> Self {
        Matrix3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    /// `u vᵀ`
    pub fn outer(u: &Vec3, v: &Vec3) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = u[i] * v[j];
            }
        }
        m
    }

    /// Builds a symmetric matrix from its upper triangle `[m00, m01, m02, m11, m12, m22]`.
    pub fn from_upper(t: [f64; 6]) -> Self {
        Matrix3([[t[0], t[1], t[2]], [t[1], t[3], t[4]], [t[2], t[4], t[5]]])
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|v| *v *= s);
        m
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix3) -> f64 {
        (*self - *other).max_abs()
    }

    /// Symmetric to within `rel_tol` relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (*self - self.transpose()).max_abs() <= rel_tol * scale
    }

    /// The three leading principal minors.
    pub fn leading_minors(&self) -> Vec3 {
        let m = &self.0;
        [
            m[0][0],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
            self.det(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Matrix3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Matrix3 {
    type Output = Matrix3;
    fn add(mut self, rhs: Matrix3) -> Matrix3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
        self
    }
}

impl Sub for Matrix3 {
    type Output = Matrix3;
    fn sub(mut self, rhs: Matrix3) -> Matrix3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Mul for Matrix3 {
    type Output = Matrix3;
    fn mul(self, rhs: Matrix3) -> Matrix3 {
        let mut m = Matrix3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = (0..3).map(|l| self.0[i][l] * rhs.0[l][j]).sum();
            }
        }
        m
    }
}

pub fn dot(u: &Vec3, v: &Vec3) -> f64 {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
}

pub fn norm(v: &Vec3) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub3(u: &Vec3, v: &Vec3) -> Vec3 {
    [u[0] - v[0], u[1] - v[1], u[2] - v[2]]
}

/// Inverse by the adjugate formula.
///
/// Rejects matrices with `|det| <= 1e-14 · ‖m‖_F³`.
pub fn invert3(m: &Matrix3) -> Result<Matrix3> {
    let det = m.det();
    let scale = m.frobenius_norm();
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale * scale {
        return Err(Error::Singular { det });
    }
    let a = &m.0;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let adj = Matrix3([
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ]);
    Ok(adj.scale(1.0 / det))
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
///
/// Only the lower triangle of `m` is read.
pub fn sqrt_spd(m: &Matrix3) -> Result<Matrix3> {
    let mut l = Matrix3::ZERO;
    for j in 0..3 {
        let mut d = m.0[j][j];
        for p in 0..j {
            d -= l.0[j][p] * l.0[j][p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l.0[j][j] = djj;
        for i in (j + 1)..3 {
            let mut s = m.0[i][j];
            for p in 0..j {
                s -= l.0[i][p] * l.0[j][p];
            }
            l.0[i][j] = s / djj;
        }
    }
    Ok(l)
}
