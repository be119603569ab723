//! Small dense square matrices of dimension 2 or 3.
//!
//! Entries are stored row-major in a fixed `[f64; 9]` buffer; only the
//! leading `d * d` slots are meaningful. Every arithmetic operation keeps the
//! unused slots at zero so that derived `PartialEq` compares values.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixD {
    d: usize,
    e: [f64; 9],
}

impl MatrixD {
    pub fn zeros(d: usize) -> Self {
        assert!(d == 2 || d == 3, "matrix dimension must be 2 or 3, got {d}");
        Self { d, e: [0.0; 9] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Build from `d * d` row-major entries.
    pub fn from_row_slice(d: usize, entries: &[f64]) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        if entries.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: entries.len(),
            });
        }
        let mut m = Self::zeros(d);
        m.e[..d * d].copy_from_slice(entries);
        Ok(m)
    }

    /// Planar rotation by `theta` radians (counter-clockwise).
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let mut m = Self::zeros(2);
        m.e[..4].copy_from_slice(&[c, -s, s, c]);
        m
    }

    /// Rotation by `theta` about `axis` (normalized internally).
    pub fn rotation3(axis: [f64; 3], theta: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = theta.sin_cos();
        let t = 1.0 - c;
        let mut m = Self::zeros(3);
        m.e = [
            t * x * x + c,
            t * x * y - s * z,
            t * x * z + s * y,
            t * x * y + s * z,
            t * y * y + c,
            t * y * z - s * x,
            t * x * z - s * y,
            t * y * z + s * x,
            t * z * z + c,
        ];
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Row-major entries, `d * d` of them.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.e[..self.d * self.d]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        let n = self.d * self.d;
        &mut self.e[..n]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Frobenius inner product.
    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist_sq(&self, other: &Self) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    #[inline]
    pub fn dist(&self, other: &Self) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self[(i, i)]).sum()
    }

    pub fn det(&self) -> f64 {
        let m = |i, j| self[(i, j)];
        match self.d {
            2 => m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
            _ => {
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            }
        }
    }

    /// Inverse via the adjugate; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = |i, j| self[(i, j)];
        let mut inv = Self::zeros(self.d);
        match self.d {
            2 => {
                inv.e[..4].copy_from_slice(&[m(1, 1), -m(0, 1), -m(1, 0), m(0, 0)]);
            }
            _ => {
                inv.e = [
                    m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1),
                    m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
                    m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1),
                    m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2),
                    m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0),
                    m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
                    m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0),
                    m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
                    m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
                ];
            }
        }
        Some(inv.scale(1.0 / det))
    }

    pub fn mul_vec(&self, x: &[f64]) -> [f64; 3] {
        let mut y = [0.0; 3];
        for (i, yi) in y.iter_mut().enumerate().take(self.d) {
            *yi = (0..self.d).map(|j| self[(i, j)] * x[j]).sum();
        }
        y
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    /// ‖MᵀM − I‖_F.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.transpose() * *self).dist(&Self::identity(self.d))
    }

    /// Lexicographic comparison of row-major entries; entries closer than
    /// `tol` count as equal.
    pub fn lex_cmp(&self, other: &Self, tol: f64) -> std::cmp::Ordering {
        for (a, b) in self.as_slice().iter().zip(other.as_slice()) {
            if (a - b).abs() > tol {
                return a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
            }
        }
        std::cmp::Ordering::Equal
    }

    #[cfg(test)]
    pub(crate) fn to_na2(self) -> nalgebra::Matrix2<f64> {
        nalgebra::Matrix2::from_row_slice(self.as_slice())
    }

    pub(crate) fn to_na3(self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_row_slice(self.as_slice())
    }

    pub(crate) fn from_na3(m: &nalgebra::Matrix3<f64>) -> Self {
        let mut out = Self::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for MatrixD {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.d && j < self.d);
        &self.e[i * self.d + j]
    }
}

impl IndexMut<(usize, usize)> for MatrixD {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.d && j < self.d);
        &mut self.e[i * self.d + j]
    }
}

impl Add for MatrixD {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for MatrixD {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        debug_assert_eq!(self.d, rhs.d);
        for (a, b) in self.e.iter_mut().zip(rhs.e) {
            *a += b;
        }
    }
}

impl Sub for MatrixD {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl SubAssign for MatrixD {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        debug_assert_eq!(self.d, rhs.d);
        for (a, b) in self.e.iter_mut().zip(rhs.e) {
            *a -= b;
        }
    }
}

impl Neg for MatrixD {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul<f64> for MatrixD {
    type Output = Self;
    #[inline]
    fn mul(self, s: f64) -> Self {
        self.scale(s)
    }
}

impl Mul for MatrixD {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        debug_assert_eq!(self.d, rhs.d);
        let d = self.d;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.e[i * d + k] * rhs.e[k * d + j];
                }
                out.e[i * d + j] = acc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rotation_composition() {
        let a = MatrixD::rotation2(0.3);
        let b = MatrixD::rotation2(0.5);
        assert_abs_diff_eq!((a * b).dist(&MatrixD::rotation2(0.8)), 0.0, epsilon = 1e-15);
        assert!(a.orthogonality_defect() < 1e-15);
    }

    #[test]
    fn inverse_3x3() {
        let m = MatrixD::from_row_slice(3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 4.0]).unwrap();
        let inv = m.inverse().unwrap();
        assert_abs_diff_eq!((m * inv).dist(&MatrixD::identity(3)), 0.0, epsilon = 1e-14);
        assert!(MatrixD::zeros(2).inverse().is_none());
    }

    #[test]
    fn rotation3_about_z_matches_planar() {
        let r = MatrixD::rotation3([0.0, 0.0, 1.0], 0.7);
        let p = MatrixD::rotation2(0.7);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(r[(i, j)], p[(i, j)], epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(r.det(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(matches!(
            MatrixD::from_row_slice(4, &[0.0; 16]),
            Err(Error::UnsupportedDimension(4))
        ));
        assert!(matches!(
            MatrixD::from_row_slice(2, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
