//! Small dense complex linear algebra.
//!
//! Every system in this crate is a handful of levels, so vectors and matrices
//! keep their entries inline (no heap allocation up to 4x4) and all products
//! are straightforward loops. The `kern` submodule exposes the same
//! operations over raw row-major slices for the integrators' hot loops.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

type Storage = SmallVec<[C64; 16]>;

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// A state vector.
#[derive(Clone, PartialEq)]
pub struct CVector {
    data: Storage,
}

impl CVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: smallvec::smallvec![ZERO; dim],
        }
    }

    pub fn from_vec(data: Vec<C64>) -> Self {
        Self {
            data: Storage::from_vec(data),
        }
    }

    pub fn from_slice(data: &[C64]) -> Self {
        Self {
            data: Storage::from_slice(data),
        }
    }

    /// Computational basis vector `|index>` (zero-based).
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} out of range for dim {dim}");
        let mut v = Self::zeros(dim);
        v.data[index] = ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(self.scale(C64::new(1.0 / n, 0.0)))
    }

    /// Inner product `<self|other>`, antilinear in `self`.
    pub fn dot(&self, other: &CVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(kern::dot(&self.data, &other.data))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &CVector) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// The dyad `|self><self|`.
    pub fn projector(&self) -> CMatrix {
        self.outer(self)
    }

    /// The dyad `|self><other|`.
    pub fn outer(&self, other: &CVector) -> CMatrix {
        let d = self.dim();
        assert_eq!(d, other.dim());
        CMatrix::from_fn(d, |i, j| self.data[i] * other.data[j].conj())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

impl fmt::Debug for CVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

/// A square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Storage,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: smallvec::smallvec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Storage::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Build from row-major entries; `entries.len()` must be a perfect square.
    pub fn from_row_major(entries: &[C64]) -> Result<Self> {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        check_dim(dim * dim, entries.len())?;
        Ok(Self {
            dim,
            data: Storage::from_slice(entries),
        })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        Self::from_fn(dim, |i, j| {
            assert_eq!(rows[i].len(), dim, "row {i} has wrong length");
            C64::new(rows[i][j], 0.0)
        })
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// The basis dyad `|row><col|` (zero-based indices).
    pub fn dyad(dim: usize, row: usize, col: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(row, col)] = ONE;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        check_dim(self.dim, other.dim)?;
        let mut out = Self::zeros(self.dim);
        kern::matmul(&self.data, &other.data, &mut out.data, self.dim);
        Ok(out)
    }

    pub fn matvec(&self, v: &CVector) -> Result<CVector> {
        check_dim(self.dim, v.dim())?;
        let mut out = CVector::zeros(self.dim);
        kern::matvec(&self.data, v.as_slice(), out.as_mut_slice(), self.dim);
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        let d = self.dim;
        Self::from_fn(d, |i, j| self.data[j * d + i].conj())
    }

    pub fn transpose(&self) -> CMatrix {
        let d = self.dim;
        Self::from_fn(d, |i, j| self.data[j * d + i])
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> CMatrix {
        self.scale(C64::new(s, 0.0))
    }

    pub fn checked_add(&self, other: &CMatrix) -> Result<CMatrix> {
        check_dim(self.dim, other.dim)?;
        Ok(self + other)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry-wise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &CMatrix) -> Result<CMatrix> {
        Ok(&self.matmul(other)? - &other.matmul(self)?)
    }

    /// Matrix exponential by scaling and squaring of a degree-18 Taylor
    /// polynomial. Accurate to rounding for the small generators used here.
    pub fn expm(&self) -> CMatrix {
        let norm = self.frobenius_norm();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let a = self.scale_real(0.5f64.powi(squarings));
        let mut term = CMatrix::identity(self.dim);
        let mut sum = term.clone();
        for k in 1..=18 {
            term = term.matmul(&a).expect("same dimension").scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        for _ in 0..squarings {
            sum = sum.matmul(&sum).expect("same dimension");
        }
        sum
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self - &self.adjoint()).max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| *z == ZERO)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `<a|self|b>`.
    pub fn sandwich(&self, a: &CVector, b: &CVector) -> Result<C64> {
        a.dot(&self.matvec(b)?)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (p, q) = (self.dim, other.dim);
        Self::from_fn(p * q, |i, j| {
            self.data[(i / q) * p + j / q] * other.data[(i % q) * q + j % q]
        })
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({})[", self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &'a CMatrix) -> CMatrix {
        self.matmul(rhs).expect("matrix product dimension mismatch")
    }
}

impl<'a> Mul<&'a CVector> for &'a CMatrix {
    type Output = CVector;
    fn mul(self, rhs: &'a CVector) -> CVector {
        self.matvec(rhs).expect("matrix-vector dimension mismatch")
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &'a CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix sum dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &'a CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix difference dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

/// Normalized expectation `<psi|a|psi> / <psi|psi>`.
pub fn expectation(psi: &CVector, a: &CMatrix) -> Result<C64> {
    check_dim(a.dim(), psi.dim())?;
    let n = psi.norm_sqr();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(kern::sandwich(psi.as_slice(), a.as_slice(), a.dim()) / n)
}

/// Slice-level kernels on row-major `d x d` blocks. No dimension checks
/// beyond debug assertions; callers own the layout.
pub mod kern {
    use super::{C64, ZERO};

    #[inline]
    pub fn dot(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    /// `out = a * b`.
    #[inline]
    pub fn matmul(a: &[C64], b: &[C64], out: &mut [C64], d: usize) {
        debug_assert!(a.len() == d * d && b.len() == d * d && out.len() == d * d);
        for i in 0..d {
            let row = &a[i * d..(i + 1) * d];
            let o = &mut out[i * d..(i + 1) * d];
            o.fill(ZERO);
            for (k, &aik) in row.iter().enumerate() {
                if aik == ZERO {
                    continue;
                }
                let brow = &b[k * d..(k + 1) * d];
                for (oj, bkj) in o.iter_mut().zip(brow) {
                    *oj += aik * bkj;
                }
            }
        }
    }

    /// `out += s * a * b`.
    #[inline]
    pub fn matmul_acc(a: &[C64], b: &[C64], s: C64, out: &mut [C64], d: usize) {
        for i in 0..d {
            let row = &a[i * d..(i + 1) * d];
            let o = &mut out[i * d..(i + 1) * d];
            for (k, &aik) in row.iter().enumerate() {
                if aik == ZERO {
                    continue;
                }
                let f = s * aik;
                let brow = &b[k * d..(k + 1) * d];
                for (oj, bkj) in o.iter_mut().zip(brow) {
                    *oj += f * bkj;
                }
            }
        }
    }

    /// `out = a * v`.
    #[inline]
    pub fn matvec(a: &[C64], v: &[C64], out: &mut [C64], d: usize) {
        for i in 0..d {
            out[i] = a[i * d..(i + 1) * d].iter().zip(v).map(|(x, y)| x * y).sum();
        }
    }

    /// `<v|a|v>` without normalization.
    #[inline]
    pub fn sandwich(v: &[C64], a: &[C64], d: usize) -> C64 {
        let mut acc = ZERO;
        for i in 0..d {
            let row: C64 = a[i * d..(i + 1) * d].iter().zip(v).map(|(x, y)| x * y).sum();
            acc += v[i].conj() * row;
        }
        acc
    }

    /// `y += s * x`.
    #[inline]
    pub fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += s * xi;
        }
    }

    #[inline]
    pub fn axpy_real(s: f64, x: &[C64], y: &mut [C64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += xi * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn expm_rotation_and_unitarity() {
        let theta = 2.7;
        let sx = CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let u = sx.scale(c(0.0, -theta)).expm();
        assert!((u[(0, 0)] - c(theta.cos(), 0.0)).norm() < 1e-14);
        assert!((u[(1, 0)] - c(0.0, -theta.sin())).norm() < 1e-14);
        let h = CMatrix::from_fn(3, |i, j| c((i + 2 * j) as f64 * 0.7, if i == j { 0.0 } else { (i as f64 - j as f64) * 1.3 }));
        let h = &h + &h.adjoint();
        let u = h.scale(c(0.0, -1.9)).expm();
        let err = (&u.matmul(&u.adjoint()).unwrap() - &CMatrix::identity(3)).max_abs();
        assert!(err < 1e-13, "{err}");
        assert!((&CMatrix::zeros(2).expm() - &CMatrix::identity(2)).max_abs() == 0.0);
    }

    fn arb_matrix(d: usize) -> impl Strategy<Value = CMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d * d).prop_map(move |v| {
            CMatrix::from_row_major(&v.into_iter().map(|(a, b)| c(a, b)).collect::<Vec<_>>())
                .unwrap()
        })
    }

    fn arb_vector(d: usize) -> impl Strategy<Value = CVector> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d)
            .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
            .prop_map(|v| CVector::from_vec(v.into_iter().map(|(a, b)| c(a, b)).collect()))
    }

    fn triple_loop(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let d = a.dim();
        let mut out = CMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_is_left_unit() {
        let m = CMatrix::from_fn(3, |i, j| c(i as f64 + 0.5, j as f64 - 1.0));
        assert_eq!(CMatrix::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn diagonal_inverse() {
        let m = CMatrix::diagonal(&[c(2.0, 0.0), I]);
        let inv = CMatrix::diagonal(&[c(0.5, 0.0), c(0.0, -1.0)]);
        let p = m.matmul(&inv).unwrap();
        assert!((&p - &CMatrix::identity(2)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let r = CMatrix::zeros(2).matmul(&CMatrix::zeros(3));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        assert!(CMatrix::zeros(2).matvec(&CVector::zeros(3)).is_err());
    }

    #[test]
    fn adjoint_cases() {
        assert_eq!(CMatrix::identity(4).adjoint(), CMatrix::identity(4));
        assert_eq!(CMatrix::dyad(3, 0, 1).adjoint(), CMatrix::dyad(3, 1, 0));
        let h = (&CMatrix::dyad(2, 0, 1) + &CMatrix::dyad(2, 1, 0)).scale_real(1.0);
        assert_eq!(h.adjoint(), h);
    }

    #[test]
    fn expectation_cases() {
        let p1 = CMatrix::dyad(2, 0, 0);
        assert_eq!(expectation(&CVector::basis(2, 0), &p1).unwrap(), ONE);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = CVector::from_vec(vec![c(s, 0.0), c(s, 0.0)]);
        let x = &CMatrix::dyad(2, 0, 1) + &CMatrix::dyad(2, 1, 0);
        assert!((expectation(&psi, &x).unwrap() - ONE).norm() < 1e-15);

        let psi2 = psi.scale(c(2.0, 0.0));
        assert!((expectation(&psi2, &x).unwrap() - expectation(&psi, &x).unwrap()).norm() < 1e-15);

        assert!(matches!(
            expectation(&CVector::zeros(2), &x),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn trace_and_norm_basics() {
        assert_eq!(CMatrix::identity(5).trace(), c(5.0, 0.0));
        let v = CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.25)]);
        assert_eq!(CMatrix::identity(2).matvec(&v).unwrap(), v);
        assert_eq!(CMatrix::zeros(4).frobenius_norm(), 0.0);
        assert!((v.projector().trace() - c(v.norm_sqr(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn kron_of_dyads() {
        let a = CMatrix::dyad(2, 0, 1);
        let b = CMatrix::dyad(3, 2, 0);
        // |0><1| ⊗ |2><0| = |0,2><1,0| = |2><3| in the 6-dim product basis
        assert_eq!(a.kron(&b), CMatrix::dyad(6, 2, 3));
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop(a in arb_matrix(4), b in arb_matrix(4)) {
            let diff = (&a.matmul(&b).unwrap() - &triple_loop(&a, &b)).max_abs();
            prop_assert!(diff < 1e-14);
        }

        #[test]
        fn adjoint_reverses_products(a in arb_matrix(3), b in arb_matrix(3)) {
            let lhs = (&a * &b).adjoint();
            let rhs = &b.adjoint() * &a.adjoint();
            prop_assert!((&lhs - &rhs).max_abs() < 1e-13);
            prop_assert_eq!(a.adjoint().adjoint(), a);
        }

        #[test]
        fn matmul_is_associative(a in arb_matrix(3), b in arb_matrix(3), m in arb_matrix(3)) {
            let l = &(&a * &b) * &m;
            let r = &a * &(&b * &m);
            prop_assert!((&l - &r).max_abs() < 1e-12);
        }

        #[test]
        fn hermitian_expectation_is_real(a in arb_matrix(4), v in arb_vector(4)) {
            let h = &a + &a.adjoint();
            let e = expectation(&v, &h).unwrap();
            prop_assert!(e.im.abs() < 1e-12);
        }
    }
}
