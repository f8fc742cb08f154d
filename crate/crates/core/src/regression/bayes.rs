//! Bayesian Beta regression: zero-centred normal priors on `xi` and
//! `log phi`, sampled by several adaptive random-walk Metropolis chains.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky_with_jitter, linear_predictor, symmetrize};
use crate::regression::beta::{find_mode, starting_values, BetaData, Penalty};
use crate::regression::mcmc::{effective_sample_size, run_chain, split_rhat, ChainSettings};
use crate::rng::{tag, StreamRng, Substream};
use crate::special::{beta_quantile, clamp_open, logistic};
use crate::{Error, Result};

/// Prior standard deviations: `xi_j ~ N(0, xi^2)`, `log phi ~ N(0, log_phi^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorScales {
    pub xi: f64,
    pub log_phi: f64,
}

impl Default for PriorScales {
    fn default() -> Self {
        PriorScales { xi: 5.0, log_phi: 2.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    /// Any parameter with split R-hat above this flags the posterior.
    pub rhat_threshold: f64,
    /// Test hook: when false the target is the prior alone.
    #[serde(skip, default = "yes")]
    pub likelihood: bool,
}

fn yes() -> bool {
    true
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            iterations: 2500,
            burn_in: 1000,
            thin: 1,
            target_acceptance: 0.234,
            rhat_threshold: 1.1,
            likelihood: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Config("MCMC needs at least 2 chains".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("MCMC thinning must be at least 1".into()));
        }
        if self.iterations < self.burn_in + 4 * self.thin {
            return Err(Error::Config(format!(
                "MCMC iterations ({}) must exceed burn-in ({}) by at least 4 retained draws",
                self.iterations, self.burn_in
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BetaPosterior {
    /// `chains[c][s]` is `(xi_1..xi_P, log phi)`.
    pub chains: Vec<Vec<Vec<f64>>>,
    pub prior: PriorScales,
    pub acceptance: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub converged: bool,
}

impl BetaPosterior {
    /// A posterior concentrated on a single `(xi, phi)`.
    pub fn point_mass(xi: &[f64], phi: f64) -> Self {
        let mut state = xi.to_vec();
        state.push(phi.ln());
        let dim = state.len();
        BetaPosterior {
            chains: vec![vec![state.clone()], vec![state]],
            prior: PriorScales::default(),
            acceptance: vec![0.0, 0.0],
            rhat: vec![1.0; dim],
            ess: vec![2.0; dim],
            converged: true,
        }
    }

    pub fn num_coefficients(&self) -> usize {
        self.chains[0][0].len() - 1
    }

    pub fn num_samples(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Pooled sample `i`, counting through the chains in order.
    pub fn sample(&self, mut i: usize) -> &[f64] {
        for chain in &self.chains {
            if i < chain.len() {
                return &chain[i];
            }
            i -= chain.len();
        }
        panic!("posterior sample index out of range");
    }

    pub fn pooled(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.chains.iter().flatten()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        let n = self.num_samples() as f64;
        let mut mean = vec![0.0; self.num_coefficients() + 1];
        for s in self.pooled() {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        mean
    }

    /// One row per retained sample: `chain, iteration, xi_1..xi_P, log_phi`.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let p = self.num_coefficients();
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend((1..=p).map(|j| format!("xi_{j}")));
        header.push("log_phi".into());
        let csv_err = |e: csv::Error| Error::Data(format!("writing MCMC trace: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (s, state) in chain.iter().enumerate() {
                let mut rec = vec![c.to_string(), s.to_string()];
                rec.extend(state.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Data(format!("writing MCMC trace: {e}")))?;
        Ok(())
    }
}

/// Sample the posterior of a Beta regression.
///
/// The chains start from points scattered around the posterior mode (two
/// Laplace standard deviations) and propose with the Laplace covariance as
/// shape; only the overall scale is adapted. Each chain uses the substream
/// `stream / CHAIN / c`.
pub fn bayes_beta_sample(
    y: &[f64],
    x: &DMatrix<f64>,
    prior: PriorScales,
    cfg: &McmcConfig,
    stream: &Substream,
) -> Result<BetaPosterior> {
    cfg.validate()?;
    if !(prior.xi > 0.0 && prior.log_phi > 0.0) {
        return Err(Error::Config("prior scales must be positive".into()));
    }
    let data = BetaData::new(y, x)?;
    let p = x.ncols();
    let dim = p + 1;
    let penalty = Penalty { xi_sd: prior.xi, log_phi_sd: prior.log_phi };
    let start = if cfg.likelihood && data.len() > p {
        starting_values(y, x).unwrap_or_else(|_| vec![0.0; dim])
    } else {
        vec![0.0; dim]
    };
    let tol = 1e-6 * (data.len() as f64).max(1.0);
    let mode = find_mode(&data, cfg.likelihood, Some(penalty), &start, tol);
    let (center, neg_h) = if mode.params.iter().all(|v| v.is_finite()) && mode.value.is_finite() {
        (mode.params, -mode.hessian)
    } else {
        (vec![0.0; dim], prior_precision(penalty, dim))
    };
    let mut laplace_cov = match cholesky_with_jitter(&neg_h) {
        Ok((chol, _)) => chol.inverse(),
        Err(_) => prior_precision(penalty, dim).map(|v| if v > 0.0 { 1.0 / v } else { 0.0 }),
    };
    symmetrize(&mut laplace_cov);
    let shape = match cholesky_with_jitter(&laplace_cov) {
        Ok((chol, _)) => chol.l(),
        Err(_) => DMatrix::identity(dim, dim),
    };
    let settings = ChainSettings {
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        target_acceptance: cfg.target_acceptance,
    };
    let log_density = |params: &[f64]| -> f64 {
        let mut v = penalty.log_density(params);
        if cfg.likelihood {
            v += data.loglik(params);
        }
        if v.is_finite() { v } else { f64::NEG_INFINITY }
    };
    let outputs: Vec<_> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.at(tag::CHAIN, c as u64).rng();
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let offset = &shape * z;
            let init: Vec<f64> = center.iter().zip(offset.iter()).map(|(m, o)| m + 2.0 * o).collect();
            run_chain(log_density, &init, &shape, &settings, &mut rng)
        })
        .collect();
    let acceptance = outputs.iter().map(|o| o.acceptance).collect();
    let chains: Vec<Vec<Vec<f64>>> = outputs.into_iter().map(|o| o.samples).collect();
    let mut rhat = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    for j in 0..dim {
        let series: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|s| s[j]).collect()).collect();
        rhat.push(split_rhat(&series));
        ess.push(effective_sample_size(&series));
    }
    let converged = rhat.iter().all(|r| r.is_finite() && *r <= cfg.rhat_threshold);
    Ok(BetaPosterior { chains, prior, acceptance, rhat, ess, converged })
}

fn prior_precision(penalty: Penalty, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| {
        if i != j {
            0.0
        } else if i + 1 == dim {
            penalty.log_phi_sd.powi(-2)
        } else {
            penalty.xi_sd.powi(-2)
        }
    })
}

/// Beta draw by inversion, kept strictly inside (0, 1).
fn beta_by_inversion(state: &[f64], row: &[f64], u: f64) -> f64 {
    let p = row.len();
    let xi = DVector::from_column_slice(&state[..p]);
    let mu = logistic(linear_predictor(row, &xi));
    let phi = state[p].exp();
    let a = (mu * phi).max(f64::MIN_POSITIVE);
    let b = ((1.0 - mu) * phi).max(f64::MIN_POSITIVE);
    clamp_open(beta_quantile(a, b, u))
}

/// One posterior-predictive value at `x_pred`: a retained `(xi, phi)` chosen
/// uniformly from the pooled chains, then `Beta(mu phi, (1 - mu) phi)`.
pub fn posterior_predictive_draw(posterior: &BetaPosterior, x_pred: &[f64], rng: &mut StreamRng) -> f64 {
    let i = rng.random_range(0..posterior.num_samples());
    let u: f64 = rng.random();
    beta_by_inversion(posterior.sample(i), x_pred, u)
}

/// `n_pred` predictive curves over the rows of `grid`; returns `n_pred x G`.
///
/// Every curve reuses one posterior sample and one uniform across all grid
/// points (common random numbers), so each curve is a quantile of a fitted
/// Beta law traced along the grid.
pub fn posterior_predictive_curve(
    posterior: &BetaPosterior,
    grid: &DMatrix<f64>,
    n_pred: usize,
    rng: &mut StreamRng,
) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = grid.row_iter().map(|r| r.iter().copied().collect()).collect();
    (0..n_pred)
        .map(|_| {
            let i = rng.random_range(0..posterior.num_samples());
            let u: f64 = rng.random();
            let state = posterior.sample(i);
            rows.iter().map(|row| beta_by_inversion(state, row, u)).collect()
        })
        .collect()
}
