//! Small dense complex linear algebra.
//!
//! Everything here is sized for per-bin problems (a handful of microphones and
//! sources), so the algorithms are direct: a cyclic complex Jacobi sweep for
//! Hermitian eigendecomposition and matrix functions built on top of it.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{DsfError, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Dense complex matrix stored column-major.
///
/// Columns are the natural unit throughout the crate: a mixing matrix is a
/// list of steering columns `h_n` and a bin's data is a list of frames `x_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data, which reads more naturally in literals.
    pub fn from_row_major(rows: usize, cols: usize, data: &[C64]) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = data[i * cols + j];
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<C64>]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "column length mismatch");
            data.extend_from_slice(c);
        }
        Self { rows, cols: columns.len(), data }
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[C64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[C64]> {
        // chunks_exact panics on a zero chunk size
        let rows = self.rows.max(1);
        self.data.chunks_exact(rows).take(if self.rows == 0 { 0 } else { self.cols })
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for l in 0..self.cols {
                let b = rhs[(l, j)];
                if b == ZERO {
                    continue;
                }
                let a = self.col(l);
                let o = out.col_mut(j);
                for i in 0..a.len() {
                    o[i] += a[i] * b;
                }
            }
        }
        out
    }

    /// `self * rhs^H` without forming the adjoint.
    pub fn mul_adjoint(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.rows);
        for l in 0..self.cols {
            let a = self.col(l);
            let b = rhs.col(l);
            for j in 0..rhs.rows {
                let bj = b[j].conj();
                let o = out.col_mut(j);
                for i in 0..a.len() {
                    o[i] += a[i] * bj;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Gram matrix `self * self^H`.
    pub fn gram(&self) -> HermitianMatrix {
        let mut g = self.mul_adjoint(self);
        g.symmetrize();
        HermitianMatrix(g)
    }

    fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            self[(i, i)] = C64::new(self[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let avg = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                self[(i, j)] = avg;
                self[(j, i)] = avg.conj();
            }
        }
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

/// Inner product `a^H b`.
#[inline]
pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[inline]
pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Tolerance used to accept a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A square matrix equal to its own conjugate transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    /// Validates squareness, finiteness and Hermitian symmetry (relative to the
    /// largest entry), then stores the exactly symmetrized matrix.
    pub fn new(mut m: CMat) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(DsfError::Shape { expected: (m.rows(), m.rows()), found: m.shape() });
        }
        if !m.is_finite() {
            return Err(DsfError::NonFinite { context: "hermitian matrix entries" });
        }
        let scale = m.as_slice().iter().fold(1.0f64, |acc, v| acc.max(v.norm()));
        let n = m.rows();
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(DsfError::NotHermitian { row: i, col: j });
                }
            }
        }
        m.symmetrize();
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

/// Eigendecomposition `A = V diag(values) V^H` with values in descending order.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigen {
    /// Applies a scalar function to the spectrum: `V diag(f(λ)) V^H`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> HermitianMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut scaled = self.vectors.clone();
        for (j, &s) in fv.iter().enumerate() {
            for v in scaled.col_mut(j) {
                *v *= s;
            }
        }
        let mut out = scaled.mul_adjoint(&self.vectors);
        debug_assert_eq!(out.rows(), n);
        out.symmetrize();
        HermitianMatrix(out)
    }
}

const MAX_SWEEPS: usize = 64;

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
pub fn hermitian_eig(a: &HermitianMatrix) -> Result<Eigen> {
    let n = a.dim();
    let mut m = a.as_matrix().clone();
    if !m.is_finite() {
        return Err(DsfError::NonFinite { context: "hermitian_eig input" });
    }
    let mut v = CMat::identity(n);
    let total = m.frobenius_norm();
    let target = f64::EPSILON * 0.5 * total;

    let mut converged = n <= 1 || total == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                jacobi_rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        // A final sweep can land exactly on the threshold.
        if off > 4.0 * target {
            return Err(DsfError::EigenNoConvergence { sweeps: MAX_SWEEPS });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.col_mut(dst).copy_from_slice(v.col(src));
    }
    Ok(Eigen { values, vectors })
}

/// Zeroes `m[p,q]` with a unitary rotation on rows/columns `p` and `q`,
/// accumulating the rotation into `v`.
fn jacobi_rotate(m: &mut CMat, v: &mut CMat, p: usize, q: usize) {
    let apq = m[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let phase = apq / mag;
    let theta = (aqq - app) / (2.0 * mag);
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // R = diag(1, conj(phase)) * [[c, s], [-s, c]]
    let r_pp = C64::new(c, 0.0);
    let r_pq = C64::new(s, 0.0);
    let r_qp = -phase.conj() * s;
    let r_qq = phase.conj() * c;

    let n = m.rows();
    for i in 0..n {
        let mp = m[(i, p)];
        let mq = m[(i, q)];
        m[(i, p)] = mp * r_pp + mq * r_qp;
        m[(i, q)] = mp * r_pq + mq * r_qq;
    }
    for j in 0..n {
        let mp = m[(p, j)];
        let mq = m[(q, j)];
        m[(p, j)] = r_pp.conj() * mp + r_qp.conj() * mq;
        m[(q, j)] = r_pq.conj() * mp + r_qq.conj() * mq;
    }
    m[(p, q)] = ZERO;
    m[(q, p)] = ZERO;
    m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
    for i in 0..n {
        let vp = v[(i, p)];
        let vq = v[(i, q)];
        v[(i, p)] = vp * r_pp + vq * r_qp;
        v[(i, q)] = vp * r_pq + vq * r_qq;
    }
}

/// Relative eigenvalue floor used when none is given explicitly.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-12;

/// `V diag(max(λ, floor))^{-1/2} V^H` for a positive semidefinite `a`.
///
/// Fails when every eigenvalue sits below `floor`.
pub fn inv_sqrt_psd(a: &HermitianMatrix, floor: f64) -> Result<HermitianMatrix> {
    let eig = hermitian_eig(a)?;
    inv_sqrt_from_eig(&eig, floor)
}

pub(crate) fn inv_sqrt_from_eig(eig: &Eigen, floor: f64) -> Result<HermitianMatrix> {
    if !(floor > 0.0) {
        return Err(DsfError::Config("eigenvalue floor must be positive"));
    }
    if eig.values.iter().all(|&l| l < floor) {
        return Err(DsfError::DegenerateCovariance);
    }
    Ok(eig.map(|l| 1.0 / l.max(floor).sqrt()))
}

/// Rotates `v` so that its first significant entry is real and nonnegative.
pub fn canonicalize_phase(v: &mut [C64]) {
    let scale = v.iter().fold(0.0f64, |acc, x| acc.max(x.norm()));
    if scale == 0.0 {
        return;
    }
    if let Some(lead) = v.iter().find(|x| x.norm() > 1e-8 * scale) {
        let rot = lead.conj() / lead.norm();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// Unit eigenvector of the largest eigenvalue, phase-canonicalized.
#[derive(Clone, Debug)]
pub struct PrincipalEigvec {
    pub vector: Vec<C64>,
    pub value: f64,
    /// Set when the top two eigenvalues are within 1e-12 of each other.
    pub tied: bool,
}

pub fn principal_eigvec(a: &HermitianMatrix) -> Result<PrincipalEigvec> {
    let eig = hermitian_eig(a)?;
    let mut vector = eig.vectors.col(0).to_vec();
    let nrm = norm(&vector);
    for x in vector.iter_mut() {
        *x /= nrm;
    }
    canonicalize_phase(&mut vector);
    let tied = eig.values.len() > 1 && (eig.values[0] - eig.values[1]).abs() <= 1e-12;
    Ok(PrincipalEigvec { vector, value: eig.values[0], tied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let b = random_matrix(rng, n, n);
        HermitianMatrix::new(b.add(&b.adjoint())).unwrap()
    }

    fn rel_residual(a: &CMat, b: &CMat) -> f64 {
        a.sub(b).frobenius_norm() / a.frobenius_norm().max(1e-300)
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let eig = hermitian_eig(&HermitianMatrix::new(CMat::identity(2)).unwrap()).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0]);
        let vhv = eig.vectors.adjoint().matmul(&eig.vectors);
        assert!(vhv.sub(&CMat::identity(2)).frobenius_norm() < 1e-14);
    }

    #[test]
    fn diagonal_sorted_descending() {
        let a = HermitianMatrix::new(CMat::diag_real(&[1.0, 3.0])).unwrap();
        let eig = hermitian_eig(&a).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0]);
        assert!((eig.vectors[(1, 0)].norm() - 1.0).abs() < 1e-15);
        assert!((eig.vectors[(0, 1)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction_up_to_dim_8() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            for _ in 0..20 {
                let a = random_hermitian(&mut rng, n);
                let eig = hermitian_eig(&a).unwrap();
                let rebuilt = eig.map(|l| l);
                assert!(rel_residual(a.as_matrix(), rebuilt.as_matrix()) < 1e-10);
                let vhv = eig.vectors.adjoint().matmul(&eig.vectors);
                assert!(vhv.sub(&CMat::identity(n)).frobenius_norm() < 1e-10);
                assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn rejects_non_hermitian_and_non_finite() {
        let m = CMat::from_row_major(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(HermitianMatrix::new(m), Err(DsfError::NotHermitian { .. })));
        let m = CMat::from_row_major(1, 1, &[C64::new(f64::NAN, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(DsfError::NonFinite { .. })));
    }

    #[test]
    fn inv_sqrt_scalar_powers() {
        let a = HermitianMatrix::new(CMat::diag_real(&[4.0, 1.0])).unwrap();
        let r = inv_sqrt_psd(&a, 1e-12).unwrap();
        let expected = CMat::diag_real(&[0.5, 1.0]);
        assert!(r.as_matrix().sub(&expected).frobenius_norm() < 1e-15);
        let id = HermitianMatrix::new(CMat::identity(3)).unwrap();
        let r = inv_sqrt_psd(&id, 1e-12).unwrap();
        assert!(r.as_matrix().sub(&CMat::identity(3)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn inv_sqrt_whitens_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=6 {
            let b = random_matrix(&mut rng, n, n + 3);
            let a = b.gram();
            let r = inv_sqrt_psd(&a, 1e-12).unwrap();
            let w = r.as_matrix().matmul(a.as_matrix()).matmul(r.as_matrix());
            assert!(w.sub(&CMat::identity(n)).frobenius_norm() < 1e-8);
            // commutes with a
            let ra = r.as_matrix().matmul(a.as_matrix());
            let ar = a.as_matrix().matmul(r.as_matrix());
            assert!(ra.sub(&ar).frobenius_norm() < 1e-9);
        }
    }

    #[test]
    fn inv_sqrt_degenerate() {
        let a = HermitianMatrix::new(CMat::zeros(2, 2)).unwrap();
        assert_eq!(inv_sqrt_psd(&a, 1e-12).unwrap_err(), DsfError::DegenerateCovariance);
    }

    #[test]
    fn principal_of_diagonal() {
        let a = HermitianMatrix::new(CMat::diag_real(&[5.0, 1.0])).unwrap();
        let p = principal_eigvec(&a).unwrap();
        assert_eq!(p.vector, vec![ONE, ZERO]);
        assert!(!p.tied);
        let p = principal_eigvec(&HermitianMatrix::new(CMat::identity(2)).unwrap()).unwrap();
        assert!(p.tied);
    }

    #[test]
    fn principal_of_rank_one() {
        let v = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let m = CMat::from_columns(2, &[v.to_vec()]);
        let a = m.gram();
        let p = principal_eigvec(&a).unwrap();
        let overlap = dot_h(&p.vector, &v).norm();
        assert!((overlap - 1.0).abs() < 1e-12);
        assert!(p.vector[0].im == 0.0 && p.vector[0].re >= 0.0);
    }

    #[test]
    fn principal_residual_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 2..=8 {
            let a = random_matrix(&mut rng, n, 2 * n).gram();
            let p = principal_eigvec(&a).unwrap();
            let av = a.as_matrix().matmul(&CMat::from_columns(n, core::slice::from_ref(&p.vector)));
            let resid: f64 = av.col(0).iter().zip(&p.vector).map(|(x, y)| (x - y * p.value).norm_sqr()).sum();
            assert!(resid.sqrt() < 1e-9 * p.value.max(1.0));
            let again = principal_eigvec(&a).unwrap();
            assert_eq!(again.vector, p.vector);
        }
    }
}
