//! Regression back-ends used inside the method of composition.
//!
//! - [`ols`]: least squares with the classical coefficient covariance
//!   (identity response function).
//! - [`beta`]: Beta regression with a logit mean link and constant
//!   precision, fit by maximum likelihood (logistic response function).
//! - [`bayes`]: the same Beta likelihood with zero-centred normal priors,
//!   sampled by adaptive random-walk Metropolis.

pub mod bayes;
pub mod beta;
pub mod mcmc;
pub mod ols;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{linear_predictor, psd_sqrt};
use crate::rng::StreamRng;
use crate::special::logistic_open;

pub use bayes::{
    bayes_beta_sample, posterior_predictive_curve, posterior_predictive_draw, BetaPosterior, McmcConfig, PriorScales,
};
pub use beta::{beta_loglik, beta_loglik_grad, beta_mle, BetaFit};
pub use ols::{ols_fit, OlsFit};

/// Regression family for the frequentist composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ols,
    Beta,
}

#[derive(Debug, Clone)]
pub enum FrequentistFit {
    Ols(OlsFit),
    Beta(BetaFit),
}

/// One draw from the asymptotic normal distribution of a fit's estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDraw {
    pub xi: DVector<f64>,
    /// Precision, for Beta fits only.
    pub phi: Option<f64>,
}

impl FrequentistFit {
    pub fn family(&self) -> Family {
        match self {
            FrequentistFit::Ols(_) => Family::Ols,
            FrequentistFit::Beta(_) => Family::Beta,
        }
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        match self {
            FrequentistFit::Ols(f) => &f.xi,
            FrequentistFit::Beta(f) => &f.xi,
        }
    }

    /// Response function `g(x^T xi)`: identity for OLS, logistic for Beta.
    pub fn predict(&self, xi: &DVector<f64>, row: &[f64]) -> f64 {
        let eta = linear_predictor(row, xi);
        match self {
            FrequentistFit::Ols(_) => eta,
            FrequentistFit::Beta(_) => logistic_open(eta),
        }
    }
}

/// Draw coefficients from `Normal(estimate, covariance)`; for Beta fits the
/// last coordinate is `log phi` and is returned exponentiated.
pub fn draw_coefficients(fit: &FrequentistFit, rng: &mut StreamRng) -> CoefficientDraw {
    let (point, cov) = match fit {
        FrequentistFit::Ols(f) => (f.xi.clone(), &f.cov),
        FrequentistFit::Beta(f) => (f.packed(), &f.cov),
    };
    let root = psd_sqrt(cov);
    let z = DVector::from_fn(point.len(), |_, _| StandardNormal.sample(rng));
    let draw = point + root * z;
    match fit {
        FrequentistFit::Ols(_) => CoefficientDraw { xi: draw, phi: None },
        FrequentistFit::Beta(_) => {
            let p = draw.len() - 1;
            CoefficientDraw { xi: draw.rows(0, p).into_owned(), phi: Some(draw[p].exp()) }
        }
    }
}
