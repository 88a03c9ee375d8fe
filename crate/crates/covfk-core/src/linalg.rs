//! Small dense complex matrices for fiber endomorphisms.
//!
//! Path simulation multiplies rank-d matrices millions of times, so these
//! live inline on the stack instead of going through `DMatrix`.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest bundle rank supported by the path engine.
pub const MAX_RANK: usize = 4;

const CAP: usize = MAX_RANK * MAX_RANK;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A d x d complex matrix with d <= [`MAX_RANK`], stored row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct FiberMat {
    dim: usize,
    data: [Complex64; CAP],
}

impl std::fmt::Debug for FiberMat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rows: Vec<Vec<Complex64>> = (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self[(i, j)]).collect())
            .collect();
        f.debug_struct("FiberMat").field("rows", &rows).finish()
    }
}

impl FiberMat {
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (1..=MAX_RANK).contains(&dim),
            "fiber rank {dim} outside 1..={MAX_RANK}"
        );
        Self {
            dim,
            data: [ZERO; CAP],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, ONE)
    }

    pub fn scalar(dim: usize, c: Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = c;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds from row-major nested rows; fails on ragged or oversized input.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || dim > MAX_RANK {
            return Err(Error::Dimension(format!(
                "matrix of size {dim} outside 1..={MAX_RANK}"
            )));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("matrix rows are not square".into()));
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> Vec<Vec<Complex64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self[(i, j)]).collect())
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut m = *self;
        for v in m.data.iter_mut().take(self.dim * self.dim) {
            *v *= c;
        }
        m
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries()
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        if self.dim == 1 {
            return self.data[0].norm();
        }
        let svd = self.to_dmatrix().svd(false, false);
        svd.singular_values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entries()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    #[inline]
    pub fn entries(&self) -> &[Complex64] {
        &self.data[..self.dim * self.dim]
    }

    /// `self * v` for a fiber vector.
    pub fn apply(&self, v: &FiberVec) -> FiberVec {
        debug_assert_eq!(self.dim, v.dim);
        let mut out = FiberVec::zeros(self.dim);
        for i in 0..self.dim {
            let mut acc = ZERO;
            for j in 0..self.dim {
                acc += self[(i, j)] * v.data[j];
            }
            out.data[i] = acc;
        }
        out
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.dim;
        if n == 1 {
            let z = self.data[0];
            return (z.norm() > 0.0).then(|| Self::scalar(1, z.inv()));
        }
        let mut a = *self;
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot =
                (col..n).max_by(|&r, &s| a[(r, col)].norm().total_cmp(&a[(s, col)].norm()))?;
            if a[(pivot, col)].norm() == 0.0 {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    let (x, y) = (a[(col, j)], a[(pivot, j)]);
                    a[(col, j)] = y;
                    a[(pivot, j)] = x;
                    let (x, y) = (inv[(col, j)], inv[(pivot, j)]);
                    inv[(col, j)] = y;
                    inv[(pivot, j)] = x;
                }
            }
            let p = a[(col, col)].inv();
            for j in 0..n {
                a[(col, j)] *= p;
                inv[(col, j)] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == ZERO {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= f * ac;
                    inv[(r, j)] -= f * ic;
                }
            }
        }
        Some(inv)
    }

    /// Matrix exponential by scaling and squaring of a Taylor polynomial.
    ///
    /// Used only for the small per-step transport increments, where the
    /// argument norm is O(sqrt(dt)).
    pub fn exp(&self) -> Self {
        if self.dim == 1 {
            return Self::scalar(1, self.data[0].exp());
        }
        let norm = self.frobenius_norm();
        let mut squarings = 0u32;
        if norm > 0.25 {
            squarings = (norm / 0.25).log2().ceil() as u32;
        }
        let a = self.scale_re(0.5f64.powi(squarings as i32));
        let mut term = Self::identity(self.dim);
        let mut sum = term;
        for k in 1..=18 {
            term = (term * a).scale_re(1.0 / k as f64);
            sum += term;
            if term.frobenius_norm() < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    /// Conjugation `u^{-1} x u` for unitary `u`, using the adjoint as inverse.
    pub fn conjugate_unitary(x: &Self, u: &Self) -> Self {
        u.adjoint() * *x * *u
    }

    pub fn to_dmatrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self[(i, j)])
    }

    pub fn from_dmatrix(m: &DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 || m.nrows() > MAX_RANK {
            return Err(Error::Dimension(format!(
                "{}x{} matrix is not a supported fiber endomorphism",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::from_fn(m.nrows(), |i, j| m[(i, j)]))
    }
}

impl Index<(usize, usize)> for FiberMat {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.dim && j < self.dim);
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for FiberMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.dim && j < self.dim);
        &mut self.data[i * self.dim + j]
    }
}

impl Mul for FiberMat {
    type Output = FiberMat;
    #[inline]
    fn mul(self, rhs: FiberMat) -> FiberMat {
        debug_assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        if n == 1 {
            return FiberMat::scalar(1, self.data[0] * rhs.data[0]);
        }
        let mut out = FiberMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl Add for FiberMat {
    type Output = FiberMat;
    #[inline]
    fn add(mut self, rhs: FiberMat) -> FiberMat {
        self += rhs;
        self
    }
}

impl AddAssign for FiberMat {
    #[inline]
    fn add_assign(&mut self, rhs: FiberMat) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += *b;
        }
    }
}

impl Sub for FiberMat {
    type Output = FiberMat;
    #[inline]
    fn sub(mut self, rhs: FiberMat) -> FiberMat {
        self -= rhs;
        self
    }
}

impl SubAssign for FiberMat {
    #[inline]
    fn sub_assign(&mut self, rhs: FiberMat) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= *b;
        }
    }
}

impl Neg for FiberMat {
    type Output = FiberMat;
    fn neg(self) -> FiberMat {
        self.scale_re(-1.0)
    }
}

/// A complex vector in a fiber of rank <= [`MAX_RANK`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiberVec {
    dim: usize,
    data: [Complex64; MAX_RANK],
}

impl FiberVec {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_RANK).contains(&dim));
        Self {
            dim,
            data: [ZERO; MAX_RANK],
        }
    }

    pub fn from_slice(v: &[Complex64]) -> Result<Self> {
        if v.is_empty() || v.len() > MAX_RANK {
            return Err(Error::Dimension(format!(
                "vector of length {} outside 1..={MAX_RANK}",
                v.len()
            )));
        }
        let mut out = Self::zeros(v.len());
        out.data[..v.len()].copy_from_slice(v);
        Ok(out)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data[..self.dim]
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data[..self.dim]
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = *self;
        for v in out.as_mut_slice() {
            *v *= c;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.as_slice()
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

impl Index<usize> for FiberVec {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.as_slice()[i]
    }
}

impl Add for FiberVec {
    type Output = FiberVec;
    fn add(mut self, rhs: FiberVec) -> FiberVec {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += *b;
        }
        self
    }
}

impl Sub for FiberVec {
    type Output = FiberVec;
    fn sub(mut self, rhs: FiberVec) -> FiberVec {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= *b;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample(dim: usize, seed: u64) -> FiberMat {
        let mut s = seed as f64;
        FiberMat::from_fn(dim, |i, j| {
            s += 1.0;
            c((s * 1.37 + i as f64).sin(), (s * 0.71 - j as f64).cos())
        })
    }

    #[test]
    fn inverse_roundtrip() {
        for dim in 1..=MAX_RANK {
            let a = sample(dim, 3);
            let inv = a.inverse().expect("invertible sample");
            let err = (a * inv - FiberMat::identity(dim)).frobenius_norm();
            assert!(err < 1e-12, "dim {dim}: {err}");
        }
    }

    #[test]
    fn exp_matches_nalgebra() {
        for dim in 1..=MAX_RANK {
            let a = sample(dim, 11).scale_re(1.7);
            let ours = a.exp().to_dmatrix();
            let reference = a.to_dmatrix().exp();
            let err = (ours - &reference).norm() / reference.norm();
            assert!(err < 1e-12, "dim {dim}: {err}");
        }
    }

    #[test]
    fn exp_of_anti_hermitian_is_unitary() {
        let a = sample(3, 5);
        let skew = (a - a.adjoint()).scale_re(0.5);
        let u = skew.exp();
        let err = (u.adjoint() * u - FiberMat::identity(3)).frobenius_norm();
        assert!(err < 1e-13);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = FiberMat::from_fn(2, |i, j| {
            if i == j {
                c(0.0, [3.0, -5.0][i])
            } else {
                c(0.0, 0.0)
            }
        });
        assert!((m.spectral_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let m = FiberMat::from_fn(2, |_, _| c(1.0, 0.0));
        assert!(m.inverse().is_none());
    }
}
