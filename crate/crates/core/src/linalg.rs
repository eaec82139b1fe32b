//! Dense kernels shared by the solvers.
//!
//! Matrices are nalgebra column-major; the hot loops below walk columns as
//! contiguous slices.

use nalgebra::linalg::{Cholesky, SVD};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `y = A x`.
pub fn matvec(a: &CMatrix, x: &[Complex64], y: &mut [Complex64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), y.len());
    y.fill(ZERO);
    let rows = a.nrows();
    for (col, &xv) in a.as_slice().chunks_exact(rows).zip(x) {
        if xv == ZERO {
            continue;
        }
        for (yv, av) in y.iter_mut().zip(col) {
            *yv += av * xv;
        }
    }
}

/// `y = A^H x`.
pub fn adjoint_matvec(a: &CMatrix, x: &[Complex64], y: &mut [Complex64]) {
    debug_assert_eq!(a.nrows(), x.len());
    debug_assert_eq!(a.ncols(), y.len());
    let rows = a.nrows();
    for (col, yv) in a.as_slice().chunks_exact(rows).zip(y.iter_mut()) {
        *yv = cdot(col, x);
    }
}

/// `sum_i conj(a_i) b_i`.
#[inline]
pub fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re, im)
}

/// Element-wise squared magnitudes, same column-major layout as `a`.
pub fn abs2(a: &CMatrix) -> DMatrix<f64> {
    a.map(|v| v.norm_sqr())
}

/// `y = P x` for a real matrix.
pub fn real_matvec(p: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    y.fill(0.0);
    let rows = p.nrows();
    for (col, &xv) in p.as_slice().chunks_exact(rows).zip(x) {
        for (yv, pv) in y.iter_mut().zip(col) {
            *yv += pv * xv;
        }
    }
}

/// `y = P^T x` for a real matrix.
pub fn real_tmatvec(p: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let rows = p.nrows();
    for (col, yv) in p.as_slice().chunks_exact(rows).zip(y.iter_mut()) {
        *yv = col.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Left singular vectors of `a` (`M x min(M, G)` columns).
pub fn left_singular_vectors(a: &CMatrix, subcarrier: usize) -> Result<CMatrix> {
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SvdFailed(subcarrier));
    }
    let svd = SVD::try_new(a.clone(), true, false, f64::EPSILON, 0).ok_or(Error::SvdFailed(subcarrier))?;
    svd.u.ok_or(Error::SvdFailed(subcarrier))
}

/// Solves `H X = B` for Hermitian positive-definite `H`.
pub fn hpd_solve(h: CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let chol = Cholesky::new(h).ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Minimum-norm least-squares coefficients `A^H (A A^H)^-1 h`.
///
/// A relative ridge of `1e-10` on the Gram diagonal keeps rank-deficient
/// dictionaries solvable.
pub fn min_norm_solution(a: &CMatrix, h: &[Complex64]) -> Result<Vec<Complex64>> {
    let gram = a * a.adjoint();
    let n = gram.nrows();
    let ridge = 1e-10 * (0..n).map(|i| gram[(i, i)].re).sum::<f64>() / n.max(1) as f64;
    let mut gram = gram;
    for i in 0..n {
        gram[(i, i)] += Complex64::new(ridge, 0.0);
    }
    let rhs = CMatrix::from_column_slice(n, 1, h);
    let z = hpd_solve(gram, &rhs)?;
    let mut x = vec![ZERO; a.ncols()];
    adjoint_matvec(a, z.as_slice(), &mut x);
    Ok(x)
}
