//! Dense row-major matrices and the symmetric eigen/factorization routines
//! the rest of the crate is built on.
//!
//! Everything here is small-dimension code (state dimensions in the tens at
//! most), so clarity wins over blocking or SIMD. Shape mismatches in the
//! arithmetic helpers panic immediately; the validated entry points
//! ([`Matrix::new`], [`SymMatrix::new`], and the decompositions) return
//! [`Error`] instead.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{invalid, Error, Result};

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Negative eigenvalues above `-PSD_CLAMP * ||m||_2` are treated as round-off.
pub const PSD_CLAMP: f64 = 1e-10;
/// Cholesky pivots at or below `PD_PIVOT * ||m||` are rejected.
pub const PD_PIVOT: f64 = 1e-14;

const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting bad shapes and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry at ({}, {})", pos / cols, pos % cols));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return invalid(format!("row {i} has {} entries, expected {ncols}", row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// `out = self * x` without allocating.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec: vector length mismatch");
        assert_eq!(out.len(), self.rows, "matvec: output length mismatch");
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Copy of the `rows x cols` sub-block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        assert!(
            r0 + b.rows <= self.rows && c0 + b.cols <= self.cols,
            "set_block out of range"
        );
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Assembles a block matrix; `None` entries are zero blocks. Every block row
    /// must contain at least one concrete block to fix its height, and every
    /// block column likewise.
    pub fn from_blocks(blocks: &[Vec<Option<&Matrix>>]) -> Result<Self> {
        let nbr = blocks.len();
        let nbc = blocks.first().map_or(0, Vec::len);
        let mut heights = vec![None; nbr];
        let mut widths = vec![None; nbc];
        for (bi, brow) in blocks.iter().enumerate() {
            if brow.len() != nbc {
                return invalid("ragged block layout");
            }
            for (bj, b) in brow.iter().enumerate() {
                if let Some(b) = b {
                    for (slot, val) in [(&mut heights[bi], b.rows), (&mut widths[bj], b.cols)] {
                        match slot {
                            Some(v) if *v != val => {
                                return invalid(format!("block ({bi}, {bj}) has inconsistent size"))
                            }
                            _ => *slot = Some(val),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights
            .into_iter()
            .map(|h| h.ok_or_else(|| Error::InvalidInput("block row without a sized block".into())))
            .collect::<Result<_>>()?;
        let widths: Vec<usize> = widths
            .into_iter()
            .map(|w| w.ok_or_else(|| Error::InvalidInput("block column without a sized block".into())))
            .collect::<Result<_>>()?;
        let mut out = Self::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (bi, brow) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (bj, b) in brow.iter().enumerate() {
                if let Some(b) = b {
                    out.set_block(r0, c0, b);
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        Ok(out)
    }

    /// Largest relative asymmetry `max |m_ij - m_ji| / (1 + max |m|)`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let scale = 1.0 + self.max_abs();
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise op on mismatched shapes"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

macro_rules! sym_ops {
    ($lhs:ty, $rhs:ty) => {
        impl Mul<&$rhs> for &$lhs {
            type Output = Matrix;
            fn mul(self, rhs: &$rhs) -> Matrix {
                let (l, r): (&Matrix, &Matrix) = (self, rhs);
                l * r
            }
        }
        impl Add<&$rhs> for &$lhs {
            type Output = Matrix;
            fn add(self, rhs: &$rhs) -> Matrix {
                let (l, r): (&Matrix, &Matrix) = (self, rhs);
                l + r
            }
        }
        impl Sub<&$rhs> for &$lhs {
            type Output = Matrix;
            fn sub(self, rhs: &$rhs) -> Matrix {
                let (l, r): (&Matrix, &Matrix) = (self, rhs);
                l - r
            }
        }
    };
}

sym_ops!(Matrix, SymMatrix);
sym_ops!(SymMatrix, Matrix);
sym_ops!(SymMatrix, SymMatrix);

/// Symmetric matrix. Construction validates symmetry and then stores the exact
/// symmetric part, so downstream code never sees round-off asymmetry.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return invalid(format!("symmetric matrix must be square, got {}x{}", m.rows, m.cols));
        }
        if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry at ({}, {})", pos / m.cols, pos % m.cols));
        }
        let asym = m.asymmetry();
        if asym > SYMMETRY_TOL {
            return invalid(format!("matrix is not symmetric (relative asymmetry {asym:e})"));
        }
        Ok(Self::symmetrize(&m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// `(m + m^T) / 2` with no tolerance check.
    pub fn symmetrize(m: &Matrix) -> Self {
        assert!(m.is_square());
        Self(Matrix::from_fn(m.rows, m.cols, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self(Matrix::from_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "quad_form: vector length mismatch");
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[i] * dot(self.0.row(i), x);
        }
        acc
    }

    /// `T M T^T`, symmetric by construction.
    pub fn congruence(&self, t: &Matrix) -> SymMatrix {
        SymMatrix::symmetrize(&(&(t * &self.0) * &t.transpose()))
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `values`.
    pub vectors: Matrix,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    /// Spectral norm `max |lambda|`.
    pub fn norm(&self) -> f64 {
        self.max().abs().max(self.min().abs())
    }

    /// `V f(Lambda) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let fl = f(lam);
            if fl == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * fl;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        SymMatrix::symmetrize(&out)
    }
}

/// Cyclic Jacobi eigen-decomposition.
pub fn sym_eig(m: &SymMatrix) -> Result<SymEig> {
    let n = m.dim();
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return invalid("sym_eig: non-finite entries");
    }
    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0 || off_norm(&a) <= JACOBI_TOL * scale;
    let mut sweep = 0;
    while !converged && sweep < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweep += 1;
        converged = off_norm(&a) <= JACOBI_TOL * scale;
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SymEig { values, vectors })
}

/// Symmetric PSD square root. Eigenvalues within round-off of zero are clamped.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    let min = eig.min();
    if min < -PSD_CLAMP * eig.norm() {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Lower Cholesky factor, or the failing pivot `(index, value)`.
pub fn cholesky(m: &Matrix) -> std::result::Result<Matrix, (usize, f64)> {
    cholesky_with_floor(m, 0.0)
}

fn cholesky_with_floor(m: &Matrix, floor: f64) -> std::result::Result<Matrix, (usize, f64)> {
    assert!(m.is_square(), "cholesky of a non-square matrix");
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err((j, d));
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the lower factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse from a lower Cholesky factor.
pub fn cholesky_inverse(l: &Matrix) -> SymMatrix {
    let n = l.rows;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    SymMatrix::symmetrize(&inv)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// The matrix norm used for the pivot floor is the Frobenius norm, an upper
/// bound on the spectral norm.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let floor = PD_PIVOT * m.frobenius_norm();
    let l = cholesky_with_floor(m.as_matrix(), floor)
        .map_err(|(index, pivot)| Error::NotPd { index, pivot })?;
    Ok(cholesky_inverse(&l))
}

/// Spectral radius of a general square matrix via Gelfand's formula evaluated
/// by repeated normalized squaring.
pub fn spectral_radius(m: &Matrix) -> f64 {
    assert!(m.is_square());
    let norm0 = m.frobenius_norm();
    if norm0 == 0.0 {
        return 0.0;
    }
    let mut cur = m.scale(1.0 / norm0);
    let mut log_rho = norm0.ln();
    let mut weight = 1.0;
    for _ in 0..64 {
        let sq = &cur * &cur;
        let nu = sq.frobenius_norm();
        if nu == 0.0 || !nu.is_finite() {
            return 0.0;
        }
        weight *= 0.5;
        let step = weight * nu.ln();
        log_rho += step;
        cur = sq.scale(1.0 / nu);
        if step.abs() < 1e-17 {
            break;
        }
    }
    log_rho.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        (a - b).frobenius_norm() <= tol
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymMatrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);

        let e = sym_eig(&SymMatrix::from_diag(&[3.0, -1.0])).unwrap();
        assert_eq!(e.values, vec![3.0, -1.0]);
        for k in 0..2 {
            let col = e.vectors.col(k);
            assert!(col.iter().filter(|v| v.abs() == 1.0).count() == 1);
        }
        assert_eq!(e.vectors.col(0)[0].abs(), 1.0);

        let e = sym_eig(&SymMatrix::from_diag(&[2.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![2.0, 2.0]);
    }

    #[test]
    fn eig_rejects_non_finite() {
        let m = SymMatrix(Matrix {
            rows: 1,
            cols: 1,
            data: vec![f64::NAN],
        });
        assert!(matches!(sym_eig(&m), Err(Error::InvalidInput(_))));
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn sqrt_of_diagonal() {
        let s = sqrt_psd(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(close(&s, &Matrix::from_diag(&[2.0, 3.0]), 1e-14));
        let s = sqrt_psd(&SymMatrix::identity(2)).unwrap();
        assert!(close(&s, &Matrix::identity(2), 1e-15));
    }

    #[test]
    fn sqrt_rejects_indefinite_and_clamps_roundoff() {
        let m = SymMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(sqrt_psd(&m), Err(Error::NotPsd { .. })));
        let m = SymMatrix::from_diag(&[1.0, -1e-13]);
        let s = sqrt_psd(&m).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn inverse_examples() {
        let inv = inverse_spd(&SymMatrix::identity(2).scale(2.0)).unwrap();
        assert!(close(&inv, &Matrix::identity(2).scale(0.5), 1e-15));

        let inv = inverse_spd(&SymMatrix::from_diag(&[0.045, 0.02])).unwrap();
        assert!((inv[(0, 0)] - 1.0 / 0.045).abs() < 1e-12);
        assert!((inv[(1, 1)] - 50.0).abs() < 1e-12);

        let sigma_w = SymMatrix::from_rows(&[[0.045, -0.011], [-0.011, 0.02]]).unwrap();
        let inv = inverse_spd(&sigma_w).unwrap();
        assert!(close(&(&*sigma_w * &*inv), &Matrix::identity(2), 1e-12));

        let singular = SymMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(inverse_spd(&singular), Err(Error::NotPd { index: 1, .. })));
    }

    #[test]
    fn symmetric_constructor_checks() {
        assert!(SymMatrix::from_rows(&[[1.0, 2.0], [2.0 + 1e-6, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[[1.0, 2.0, 3.0]]).is_err());
        let s = SymMatrix::from_rows(&[[1.0, 2.0], [2.0 + 1e-15, 1.0]]).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn blocks_assemble() {
        let a = Matrix::identity(2);
        let b = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let c = Matrix::from_rows(&[[5.0]]).unwrap();
        let m = Matrix::from_blocks(&[vec![Some(&a), Some(&b)], vec![None, Some(&c)]]).unwrap();
        assert_eq!(m.rows(), 3);
        assert_eq!(m.row(1), &[0.0, 1.0, 2.0]);
        assert_eq!(m.row(2), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn spectral_radius_cases() {
        assert_eq!(spectral_radius(&Matrix::zeros(3, 3)), 0.0);
        let nil = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(spectral_radius(&nil) < 1e-12);
        let rot = Matrix::from_rows(&[[0.0, -0.9], [0.9, 0.0]]).unwrap();
        assert!((spectral_radius(&rot) - 0.9).abs() < 1e-12);
        let jordan = Matrix::from_rows(&[[0.5, 10.0], [0.0, 0.5]]).unwrap();
        assert!((spectral_radius(&jordan) - 0.5).abs() < 1e-9);
    }

    fn random_sym(n: usize, entries: &[f64]) -> SymMatrix {
        let m = Matrix::from_fn(n, n, |i, j| entries[i * n + j]);
        SymMatrix::symmetrize(&m)
    }

    fn random_spd(n: usize, entries: &[f64]) -> SymMatrix {
        let g = Matrix::from_fn(n, n, |i, j| entries[i * n + j]);
        let gtg = &g.transpose() * &g;
        SymMatrix::symmetrize(&(&gtg + &Matrix::identity(n).scale(1e-3)))
    }

    proptest! {
        #[test]
        fn eig_reconstructs(n in 1usize..=12, entries in prop::collection::vec(-10.0f64..10.0, 144)) {
            let m = random_sym(n, &entries);
            let e = sym_eig(&m).unwrap();
            let rec = e.reconstruct_with(|l| l);
            let err = (&*rec - &*m).frobenius_norm();
            prop_assert!(err <= 1e-10 * (1.0 + m.frobenius_norm()));
            let vtv = &e.vectors.transpose() * &e.vectors;
            prop_assert!((&vtv - &Matrix::identity(n)).max_abs() <= 1e-10);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn sqrt_and_inverse_of_spd(n in 1usize..=10, entries in prop::collection::vec(-3.0f64..3.0, 100)) {
            let m = random_spd(n, &entries);
            let s = sqrt_psd(&m).unwrap();
            let sq = &*s * &*s;
            prop_assert!((&sq - &*m).frobenius_norm() <= 1e-9 * (1.0 + m.frobenius_norm()));
            let inv = inverse_spd(&m).unwrap();
            let prod = &*m * &*inv;
            prop_assert!((&prod - &Matrix::identity(n)).max_abs() <= 1e-9 * (1.0 + m.frobenius_norm()));
        }
    }
}
