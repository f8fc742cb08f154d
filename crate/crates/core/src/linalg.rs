//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Jitter schedule for Cholesky retries: 1e-8, 1e-7, ..., 1e-2.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-2;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factorization, adding escalating diagonal jitter on failure.
///
/// Returns the factorization and the jitter that was needed (0 when the
/// matrix factored as given).
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entries".into()));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let n = m.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let shifted = m + DMatrix::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "matrix of order {n} is not positive definite even with jitter {JITTER_MAX}"
    )))
}

/// Inverse of a symmetric positive definite matrix via [`cholesky_with_jitter`].
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (c, jitter) = cholesky_with_jitter(m)?;
    let mut inv = c.inverse();
    symmetrize(&mut inv);
    Ok((inv, jitter))
}

/// log-determinant from a Cholesky factor.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Symmetric square root `S` with `S S^T = m` for a positive semi-definite `m`.
///
/// Negative eigenvalues from rounding are treated as zero, so an all-zero
/// covariance yields an all-zero root.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.iter().all(|&v| v == 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    scaled
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `row · coef` for one design row, the shared linear-predictor kernel.
pub fn linear_predictor(row: &[f64], coef: &DVector<f64>) -> f64 {
    row.iter().zip(coef.iter()).map(|(x, c)| x * c).sum()
}
