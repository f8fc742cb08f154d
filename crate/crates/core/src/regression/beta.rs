//! Beta regression in the mean–precision parameterization:
//! `y_d ~ Beta(mu_d phi, (1 - mu_d) phi)`, `logit(mu_d) = x_d^T xi`, with a
//! single precision `phi`. Parameters are handled internally as the packed
//! vector `(xi, log phi)`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{cholesky_with_jitter, norm, symmetrize};
use crate::optim::{minimize, BfgsConfig};
use crate::regression::ols::ols_fit;
use crate::special::{digamma, ln_gamma, logistic, logit, trigamma};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BetaFit {
    pub xi: DVector<f64>,
    pub phi: f64,
    /// Asymptotic covariance of `(xi, log phi)`: inverse observed information.
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

impl BetaFit {
    /// `(xi, log phi)` as one vector.
    pub fn packed(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.xi.iter().copied().collect();
        v.push(self.phi.ln());
        DVector::from_vec(v)
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

/// Responses and design with the per-observation logs cached.
#[derive(Debug, Clone)]
pub struct BetaData<'a> {
    x: &'a DMatrix<f64>,
    ln_y: Vec<f64>,
    ln_1my: Vec<f64>,
}

impl<'a> BetaData<'a> {
    pub fn new(y: &[f64], x: &'a DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::Data(format!("{} responses for {} design rows", y.len(), x.nrows())));
        }
        if let Some((d, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::Data(format!("boundary observation: y[{d}] = {v} is not inside (0, 1)")));
        }
        Ok(BetaData {
            x,
            ln_y: y.iter().map(|v| v.ln()).collect(),
            ln_1my: y.iter().map(|v| (-v).ln_1p()).collect(),
        })
    }

    pub fn num_coefficients(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.ln_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_y.is_empty()
    }

    fn eta(&self, d: usize, params: &[f64]) -> f64 {
        self.x.row(d).iter().zip(params).map(|(a, b)| a * b).sum()
    }

    pub fn loglik(&self, params: &[f64]) -> f64 {
        let p = self.num_coefficients();
        let phi = params[p].exp();
        let base = ln_gamma(phi);
        (0..self.len())
            .map(|d| {
                let eta = self.eta(d, params);
                let (a, b) = (logistic(eta) * phi, logistic(-eta) * phi);
                base - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * self.ln_y[d] + (b - 1.0) * self.ln_1my[d]
            })
            .sum()
    }

    /// Log-likelihood and its gradient with respect to `(xi, log phi)`.
    pub fn loglik_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.num_coefficients();
        let phi = params[p].exp();
        let (base, psi_phi) = (ln_gamma(phi), digamma(phi));
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let mut dphi = 0.0;
        for d in 0..self.len() {
            let eta = self.eta(d, params);
            let (mu, nu) = (logistic(eta), logistic(-eta));
            let (a, b) = (mu * phi, nu * phi);
            let (ly, l1y) = (self.ln_y[d], self.ln_1my[d]);
            total += base - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y;
            let (psi_a, psi_b) = (digamma(a), digamma(b));
            let d_eta = phi * mu * nu * ((ly - l1y) - (psi_a - psi_b));
            for (g, xv) in grad[..p].iter_mut().zip(self.x.row(d).iter()) {
                *g += d_eta * xv;
            }
            dphi += psi_phi - mu * psi_a - nu * psi_b + mu * ly + nu * l1y;
        }
        grad[p] = phi * dphi;
        total
    }

    /// Analytic Hessian of the log-likelihood with respect to `(xi, log phi)`.
    pub fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let p = self.num_coefficients();
        let phi = params[p].exp();
        let (psi_phi, tri_phi) = (digamma(phi), trigamma(phi));
        let mut h = DMatrix::zeros(p + 1, p + 1);
        let (mut l_phi, mut l_phiphi) = (0.0, 0.0);
        for d in 0..self.len() {
            let eta = self.eta(d, params);
            let (mu, nu) = (logistic(eta), logistic(-eta));
            let (a, b) = (mu * phi, nu * phi);
            let (ly, l1y) = (self.ln_y[d], self.ln_1my[d]);
            let (psi_a, psi_b, tri_a, tri_b) = (digamma(a), digamma(b), trigamma(a), trigamma(b));
            let m = mu * nu;
            let resid = (ly - l1y) - (psi_a - psi_b);
            let h_eta_eta = phi * m * (nu - mu) * resid - phi * phi * m * m * (tri_a + tri_b);
            let h_eta_phi = m * (resid - phi * (mu * tri_a - nu * tri_b));
            l_phi += psi_phi - mu * psi_a - nu * psi_b + mu * ly + nu * l1y;
            l_phiphi += tri_phi - mu * mu * tri_a - nu * nu * tri_b;
            let row = self.x.row(d);
            for i in 0..p {
                for j in 0..=i {
                    h[(i, j)] += h_eta_eta * row[i] * row[j];
                }
                h[(p, i)] += phi * h_eta_phi * row[i];
            }
        }
        h[(p, p)] = phi * l_phi + phi * phi * l_phiphi;
        for i in 0..=p {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        h
    }
}

pub fn beta_loglik(y: &[f64], x: &DMatrix<f64>, xi: &[f64], phi: f64) -> Result<f64> {
    let data = BetaData::new(y, x)?;
    check_params(&data, xi, phi)?;
    let mut params = xi.to_vec();
    params.push(phi.ln());
    Ok(data.loglik(&params))
}

/// Log-likelihood and gradient with respect to `(xi, log phi)`.
pub fn beta_loglik_grad(y: &[f64], x: &DMatrix<f64>, xi: &[f64], phi: f64) -> Result<(f64, Vec<f64>)> {
    let data = BetaData::new(y, x)?;
    check_params(&data, xi, phi)?;
    let mut params = xi.to_vec();
    params.push(phi.ln());
    let mut grad = vec![0.0; params.len()];
    let v = data.loglik_grad(&params, &mut grad);
    Ok((v, grad))
}

fn check_params(data: &BetaData, xi: &[f64], phi: f64) -> Result<()> {
    if xi.len() != data.num_coefficients() {
        return Err(Error::Data(format!("{} coefficients for {} design columns", xi.len(), data.num_coefficients())));
    }
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::Data(format!("precision must be positive, got {phi}")));
    }
    Ok(())
}

/// Starting point: OLS on `logit(y)` for `xi`, and the method-of-moments
/// precision implied by the residual variance on the logit scale.
pub fn starting_values(y: &[f64], x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = y.len();
    let p = x.ncols();
    let z: Vec<f64> = y.iter().map(|&v| logit(v.clamp(1e-6, 1.0 - 1e-6))).collect();
    let ols = ols_fit(&z, x)?;
    let fitted = x * &ols.xi;
    let resid_ss: f64 = z.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let s2 = resid_ss / (d - p) as f64;
    let phi0 = fitted
        .iter()
        .map(|&eta| {
            let m = logistic(eta) * logistic(-eta);
            // variance on the response scale by the delta method
            let var = s2 * m * m;
            if var > 0.0 { m / var - 1.0 } else { f64::NAN }
        })
        .filter(|v| v.is_finite())
        .sum::<f64>()
        / d as f64;
    let phi0 = if phi0.is_finite() && phi0 > 0.1 { phi0.min(1e6) } else { 1.0 };
    let mut start: Vec<f64> = ols.xi.iter().copied().collect();
    start.push(phi0.ln());
    Ok(start)
}

/// Zero-centred independent normal penalty on packed parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Penalty {
    pub xi_sd: f64,
    pub log_phi_sd: f64,
}

impl Penalty {
    fn sd(&self, i: usize, p: usize) -> f64 {
        if i == p { self.log_phi_sd } else { self.xi_sd }
    }

    pub fn log_density(&self, params: &[f64]) -> f64 {
        let p = params.len() - 1;
        params.iter().enumerate().map(|(i, v)| -0.5 * (v / self.sd(i, p)).powi(2)).sum()
    }
}

pub(crate) struct ModeResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub hessian: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximize `scale * loglik + log penalty` (either term optional) by BFGS
/// followed by safeguarded Newton steps with the analytic Hessian.
pub(crate) fn find_mode(
    data: &BetaData,
    include_likelihood: bool,
    penalty: Option<Penalty>,
    start: &[f64],
    grad_tol: f64,
) -> ModeResult {
    let n = start.len();
    let p = n - 1;
    let objective = |params: &[f64], grad: &mut [f64]| -> f64 {
        let mut v = 0.0;
        if include_likelihood {
            v = data.loglik_grad(params, grad);
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
        }
        if let Some(pen) = penalty {
            v += pen.log_density(params);
            for i in 0..n {
                grad[i] -= params[i] / pen.sd(i, p).powi(2);
            }
        }
        v
    };
    let hessian = |params: &[f64]| -> DMatrix<f64> {
        let mut h = if include_likelihood { data.hessian(params) } else { DMatrix::zeros(n, n) };
        if let Some(pen) = penalty {
            for i in 0..n {
                h[(i, i)] -= 1.0 / pen.sd(i, p).powi(2);
            }
        }
        h
    };
    let cfg = BfgsConfig { max_iterations: 1000, grad_tol, ..BfgsConfig::default() };
    let res = minimize(
        |x, g| {
            let v = objective(x, g);
            g.iter_mut().for_each(|gi| *gi = -*gi);
            -v
        },
        start,
        &cfg,
    );
    let mut params = res.x;
    let mut value = -res.value;
    let mut grad: Vec<f64> = res.grad.iter().map(|g| -g).collect();
    let mut iterations = res.iterations;
    for _ in 0..50 {
        if norm(&grad) < grad_tol * 1e-3 {
            break;
        }
        let neg_h = -hessian(&params);
        let Some(chol) = neg_h.cholesky() else { break };
        let step = chol.solve(&DVector::from_column_slice(&grad));
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = (0..n).map(|i| params[i] + t * step[i]).collect();
            let mut cg = vec![0.0; n];
            let cv = objective(&cand, &mut cg);
            if cv.is_finite() && cv >= value && norm(&cg) < norm(&grad) {
                params = cand;
                value = cv;
                grad = cg;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        iterations += 1;
    }
    let converged = norm(&grad) < grad_tol;
    let h = hessian(&params);
    ModeResult { params, value, hessian: h, converged, iterations }
}

/// Maximum-likelihood Beta regression with the inverse observed information
/// as asymptotic covariance of `(xi, log phi)`.
pub fn beta_mle(y: &[f64], x: &DMatrix<f64>) -> Result<BetaFit> {
    let data = BetaData::new(y, x)?;
    let p = x.ncols();
    if data.len() <= p + 1 {
        return Err(Error::Data(format!("Beta regression needs more than {} observations", p + 1)));
    }
    let start = starting_values(y, x)?;
    let tol = 1e-6 * (data.len() as f64).max(1.0);
    let mode = find_mode(&data, true, None, &start, tol);
    if !mode.converged || mode.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence { context: "Beta regression MLE".into(), last_iterate: mode.params });
    }
    let info = -&mode.hessian;
    let (chol, _) = cholesky_with_jitter(&info)
        .map_err(|e| Error::Numerical(format!("Beta regression information matrix: {e}")))?;
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    Ok(BetaFit {
        xi: DVector::from_column_slice(&mode.params[..p]),
        phi: mode.params[p].exp(),
        cov,
        loglik: mode.value,
        iterations: mode.iterations,
    })
}
