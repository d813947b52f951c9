//! Small numerical helpers: adaptive quadrature and Hermitian linear algebra.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
///
/// Splits intervals until the local Richardson error estimate is below the
/// requested relative tolerance (with a small absolute floor).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    let tol = rel_tol * whole.abs().max(1e-300) + 1e-14;
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Relative ridge added to score-covariance matrices before inversion.
pub const C_RIDGE_TAU: f64 = 1e-8;

/// Returns `c + tau * (trace(c)/m) * I`.
pub fn ridge_regularize(c: &DMatrix<Complex64>, tau: f64) -> DMatrix<Complex64> {
    let m = c.nrows();
    let trace: f64 = (0..m).map(|k| c[(k, k)].re).sum();
    let shift = tau * trace / m as f64;
    let mut out = c.clone();
    for k in 0..m {
        out[(k, k)] += Complex64::new(shift, 0.0);
    }
    out
}

/// Cholesky factor of a Hermitian positive definite matrix, with an error
/// naming the matrix on failure.
pub fn cholesky_hermitian(
    c: DMatrix<Complex64>,
    name: &str,
) -> Result<Cholesky<Complex64, Dyn>> {
    Cholesky::new(c).ok_or_else(|| Error::Numerical(format!("{name} is not positive definite")))
}

/// Cholesky factor of a real symmetric positive definite matrix.
pub fn cholesky_real(c: DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(c).ok_or_else(|| Error::Numerical(format!("{name} is not positive definite")))
}

/// Eigenvalues of a Hermitian matrix through its real symmetric embedding
/// `[[Re, -Im], [Im, Re]]` (each eigenvalue of the input appears twice).
pub fn hermitian_eigenvalues(c: &DMatrix<Complex64>) -> Vec<f64> {
    let m = c.nrows();
    let mut emb = DMatrix::<f64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let z = c[(i, j)];
            emb[(i, j)] = z.re;
            emb[(i, j + m)] = -z.im;
            emb[(i + m, j)] = z.im;
            emb[(i + m, j + m)] = z.re;
        }
    }
    let mut eigs: Vec<f64> = emb.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // keep one copy of each doubled eigenvalue
    eigs.into_iter().step_by(2).collect()
}

/// Minimum eigenvalue of a Hermitian matrix.
pub fn hermitian_min_eig(c: &DMatrix<Complex64>) -> f64 {
    hermitian_eigenvalues(c)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum eigenvalue of a real symmetric matrix.
pub fn symmetric_min_eig(c: &DMatrix<f64>) -> f64 {
    c.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Forces exact symmetry on a nearly-symmetric real matrix.
pub fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Inverse of a small real symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky_real(a.clone(), name)?;
    Ok(chol.inverse())
}
