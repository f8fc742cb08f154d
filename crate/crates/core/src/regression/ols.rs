use nalgebra::{DMatrix, DVector};

use crate::design::collinear_columns;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub xi: DVector<f64>,
    /// Residual variance RSS / (D - P).
    pub sigma2: f64,
    /// `sigma2 * (X^T X)^{-1}`
    pub cov: DMatrix<f64>,
}

/// Least squares via Householder QR.
///
/// A residual sum of squares at rounding level (relative to `y`) is reported
/// as exactly zero, so noise-free data yields a zero covariance.
pub fn ols_fit(y: &[f64], x: &DMatrix<f64>) -> Result<OlsFit> {
    let (d, p) = x.shape();
    if y.len() != d {
        return Err(Error::Data(format!("{} responses for {d} design rows", y.len())));
    }
    if d <= p {
        return Err(Error::Data(format!("OLS needs more observations ({d}) than coefficients ({p})")));
    }
    let bad = collinear_columns(x);
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad.iter().map(|j| format!("column {j}")).collect() });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let xi = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular R factor in OLS".into()))?;
    let resid = &yv - x * &xi;
    let mut rss = resid.norm_squared();
    let ymax = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if rss <= d as f64 * (8.0 * f64::EPSILON * ymax).powi(2) {
        rss = 0.0;
    }
    let sigma2 = rss / (d - p) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular R factor in OLS".into()))?;
    let cov = (&r_inv * r_inv.transpose()) * sigma2;
    Ok(OlsFit { xi, sigma2, cov })
}
