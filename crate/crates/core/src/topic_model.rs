//! Prevalence-covariate logistic-normal topic model fit by variational EM.
//!
//! Each document has unconstrained topic weights `eta_d` in R^{K-1} with
//! `eta_d ~ Normal(Gamma^T x_d, Sigma)`; topic proportions are
//! `softmax([eta_d, 0])`, and tokens are drawn from the mixture of topic-word
//! rows of `B`. The E-step finds the mode of each document's log posterior
//! and takes a Laplace (Gaussian) approximation there; the M-step updates
//! `Gamma`, `Sigma` and `B` in closed form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::linalg::{chol_logdet, cholesky_with_jitter, min_eigenvalue, norm, symmetrize};
use crate::optim::{minimize, BfgsConfig};
use crate::rng::{tag, Substream};
use crate::spectral::anchor_topics;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct StmParams {
    /// P x (K-1) prevalence coefficients.
    pub gamma: DMatrix<f64>,
    /// (K-1) x (K-1) prevalence covariance.
    pub sigma: DMatrix<f64>,
    /// K x V topic-word probabilities.
    pub beta: DMatrix<f64>,
}

impl StmParams {
    pub fn num_topics(&self) -> usize {
        self.beta.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.ncols()
    }

    pub fn num_covariates(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_topics();
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 topics, got {k}")));
        }
        if self.gamma.ncols() != k - 1 || self.sigma.nrows() != k - 1 || self.sigma.ncols() != k - 1 {
            return Err(Error::Data(format!(
                "inconsistent parameter shapes: Gamma {}x{}, Sigma {}x{}, B {}x{}",
                self.gamma.nrows(),
                self.gamma.ncols(),
                self.sigma.nrows(),
                self.sigma.ncols(),
                k,
                self.vocab_size()
            )));
        }
        for i in 0..k - 1 {
            for j in 0..i {
                if (self.sigma[(i, j)] - self.sigma[(j, i)]).abs() > 1e-10 * (1.0 + self.sigma[(i, j)].abs()) {
                    return Err(Error::Data("Sigma is not symmetric".into()));
                }
            }
        }
        if !(min_eigenvalue(&self.sigma) > 0.0) {
            return Err(Error::Data("Sigma is not positive definite".into()));
        }
        for (r, row) in self.beta.row_iter().enumerate() {
            if row.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
                return Err(Error::Data(format!("topic {r} has a negative or non-finite word probability")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::Data(format!("topic {r} word probabilities sum to {s}")));
            }
        }
        Ok(())
    }

    /// Prior mean `Gamma^T x` for one design row.
    pub fn prior_mean(&self, x_row: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.gamma.ncols(), |j, _| {
            x_row.iter().enumerate().map(|(p, x)| x * self.gamma[(p, j)]).sum()
        })
    }
}

/// Map `eta` in R^{K-1} to the simplex with the K-th weight pinned at zero.
pub fn softmax_eta(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().copied().fold(0.0_f64, f64::max);
    let mut out: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    out.push((-max).exp());
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|t| *t /= total);
    out
}

/// Gaussian prior pieces shared by all documents in one E-step.
#[derive(Debug, Clone)]
pub struct PriorTerms {
    pub precision: DMatrix<f64>,
    /// `-0.5 * log det(2 pi Sigma)`
    pub log_norm: f64,
}

impl PriorTerms {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let (chol, _) = cholesky_with_jitter(sigma)?;
        let logdet = chol_logdet(&chol);
        let mut precision = chol.inverse();
        symmetrize(&mut precision);
        Ok(PriorTerms {
            precision,
            log_norm: -0.5 * (sigma.nrows() as f64 * LN_2PI + logdet),
        })
    }
}

/// Log joint of one document as a function of `eta`:
/// `log Normal(eta; mu, Sigma) + sum_v c_v log(sum_k theta_k(eta) B_kv)`.
pub struct DocObjective<'a> {
    counts: &'a [(usize, u32)],
    total: f64,
    mu: DVector<f64>,
    prior: &'a PriorTerms,
    beta: &'a DMatrix<f64>,
}

impl<'a> DocObjective<'a> {
    pub fn new(doc: &'a Document, x_row: &[f64], params: &'a StmParams, prior: &'a PriorTerms) -> Self {
        DocObjective {
            counts: doc.counts(),
            total: doc.total_tokens() as f64,
            mu: params.prior_mean(x_row),
            prior,
            beta: &params.beta,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.mu
    }

    fn prior_part(&self, eta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let km1 = self.dim();
        let diff: Vec<f64> = (0..km1).map(|i| eta[i] - self.mu[i]).collect();
        let mut quad = 0.0;
        let mut pd = vec![0.0; km1];
        for i in 0..km1 {
            pd[i] = (0..km1).map(|j| self.prior.precision[(i, j)] * diff[j]).sum();
            quad += diff[i] * pd[i];
        }
        if let Some(g) = grad {
            for i in 0..km1 {
                g[i] -= pd[i];
            }
        }
        self.prior.log_norm - 0.5 * quad
    }

    pub fn value(&self, eta: &[f64]) -> f64 {
        let theta = softmax_eta(eta);
        let lik: f64 = self
            .counts
            .iter()
            .map(|&(v, c)| c as f64 * self.word_prob(&theta, v).ln())
            .sum();
        lik + self.prior_part(eta, None)
    }

    fn word_prob(&self, theta: &[f64], v: usize) -> f64 {
        let col = self.beta.column(v);
        theta.iter().zip(col.iter()).map(|(t, b)| t * b).sum()
    }

    /// Value and gradient with respect to `eta`.
    pub fn value_grad(&self, eta: &[f64], grad: &mut [f64]) -> f64 {
        let km1 = self.dim();
        let theta = softmax_eta(eta);
        grad.iter_mut().zip(&theta).for_each(|(g, t)| *g = -self.total * t);
        let mut lik = 0.0;
        for &(v, c) in self.counts {
            let col = self.beta.column(v);
            let p = self.word_prob(&theta, v);
            let c = c as f64;
            lik += c * p.ln();
            let w = c / p;
            for k in 0..km1 {
                grad[k] += w * theta[k] * col[k];
            }
        }
        lik + self.prior_part(eta, Some(grad))
    }

    /// Exact Hessian with respect to `eta`.
    pub fn hessian(&self, eta: &[f64]) -> DMatrix<f64> {
        let km1 = self.dim();
        let theta = softmax_eta(eta);
        let mut h = DMatrix::zeros(km1, km1);
        let mut r = vec![0.0; km1];
        for &(v, c) in self.counts {
            let col = self.beta.column(v);
            let p = self.word_prob(&theta, v);
            let c = c as f64;
            for k in 0..km1 {
                r[k] = theta[k] * col[k] / p;
            }
            for i in 0..km1 {
                h[(i, i)] += c * r[i];
                for j in 0..km1 {
                    h[(i, j)] -= c * r[i] * r[j];
                }
            }
        }
        for i in 0..km1 {
            h[(i, i)] -= self.total * theta[i];
            for j in 0..km1 {
                h[(i, j)] += self.total * theta[i] * theta[j];
            }
        }
        h - &self.prior.precision
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EStepConfig {
    pub max_iterations: usize,
    pub grad_tol: f64,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for EStepConfig {
    fn default() -> Self {
        EStepConfig { max_iterations: 500, grad_tol: 1e-6, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocPosterior {
    /// Posterior mode of `eta_d`.
    pub lambda: DVector<f64>,
    /// Laplace covariance at the mode.
    pub sigma: DMatrix<f64>,
    /// Laplace approximation to the document's log evidence.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Diagonal jitter needed to invert the negative Hessian.
    pub jitter: f64,
    /// Objective after each optimizer step (only when requested).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub docs: Vec<DocPosterior>,
}

impl VariationalPosterior {
    pub fn num_documents(&self) -> usize {
        self.docs.len()
    }

    pub fn num_topics(&self) -> usize {
        self.docs.first().map_or(0, |d| d.lambda.len() + 1)
    }

    pub fn bound(&self) -> f64 {
        self.docs.iter().map(|d| d.objective).sum()
    }

    pub fn nonconverged(&self) -> usize {
        self.docs.iter().filter(|d| !d.converged).count()
    }

    /// Point estimates `softmax(lambda_d)`, one row per document.
    pub fn theta_mode(&self) -> DMatrix<f64> {
        let k = self.num_topics();
        let mut out = DMatrix::zeros(self.docs.len(), k);
        for (d, doc) in self.docs.iter().enumerate() {
            for (j, t) in softmax_eta(doc.lambda.as_slice()).into_iter().enumerate() {
                out[(d, j)] = t;
            }
        }
        out
    }
}

pub fn e_step_document(doc: &Document, x_row: &[f64], params: &StmParams, cfg: &EStepConfig) -> Result<DocPosterior> {
    let prior = PriorTerms::new(&params.sigma)?;
    e_step_with_prior(doc, x_row, params, &prior, None, cfg)
}

/// E-step for one document with precomputed prior terms, optionally warm
/// started at `init` (defaults to the prior mean).
pub fn e_step_with_prior(
    doc: &Document,
    x_row: &[f64],
    params: &StmParams,
    prior: &PriorTerms,
    init: Option<&DVector<f64>>,
    cfg: &EStepConfig,
) -> Result<DocPosterior> {
    let obj = DocObjective::new(doc, x_row, params, prior);
    let km1 = obj.dim();
    let start: Vec<f64> = init.unwrap_or(obj.prior_mean()).iter().copied().collect();
    let bfgs = BfgsConfig {
        max_iterations: cfg.max_iterations,
        grad_tol: cfg.grad_tol,
        record_trace: cfg.record_trace,
        ..BfgsConfig::default()
    };
    let res = minimize(
        |eta, g| {
            let v = obj.value_grad(eta, g);
            g.iter_mut().for_each(|gi| *gi = -*gi);
            -v
        },
        &start,
        &bfgs,
    );
    let mut eta = res.x;
    let mut value = -res.value;
    let mut grad: Vec<f64> = res.grad.iter().map(|g| -g).collect();
    let mut iterations = res.iterations;
    let mut trace: Vec<f64> = res.trace.iter().map(|v| -v).collect();

    // Newton refinement: BFGS can stall a little above the gradient
    // tolerance once objective differences reach rounding level.
    let mut polish = 0;
    while norm(&grad) >= cfg.grad_tol && polish < 20 {
        polish += 1;
        let neg_h = -obj.hessian(&eta);
        let Some(chol) = neg_h.clone().cholesky() else { break };
        let step = chol.solve(&DVector::from_column_slice(&grad));
        let cand: Vec<f64> = (0..km1).map(|i| eta[i] + step[i]).collect();
        let mut cand_grad = vec![0.0; km1];
        let cand_value = obj.value_grad(&cand, &mut cand_grad);
        if !(cand_value >= value) || norm(&cand_grad) >= norm(&grad) {
            break;
        }
        eta = cand;
        value = cand_value;
        grad = cand_grad;
        iterations += 1;
        if cfg.record_trace {
            trace.push(value);
        }
    }

    let converged = norm(&grad) < cfg.grad_tol;
    let neg_h = -obj.hessian(&eta);
    let (chol, jitter) = cholesky_with_jitter(&neg_h)?;
    let mut sigma = chol.inverse();
    symmetrize(&mut sigma);
    let objective = value - 0.5 * chol_logdet(&chol) + 0.5 * km1 as f64 * LN_2PI;
    Ok(DocPosterior {
        lambda: DVector::from_vec(eta),
        sigma,
        objective,
        converged,
        iterations,
        jitter,
        trace,
    })
}

/// E-step over the whole corpus. Documents are independent given `params`,
/// so they are processed in parallel; the result does not depend on the
/// schedule.
pub fn e_step(
    corpus: &Corpus,
    x: &DMatrix<f64>,
    params: &StmParams,
    warm_start: Option<&VariationalPosterior>,
    cfg: &EStepConfig,
) -> Result<VariationalPosterior> {
    let prior = PriorTerms::new(&params.sigma)?;
    let docs = corpus
        .documents
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let row: Vec<f64> = x.row(d).iter().copied().collect();
            let init = warm_start.map(|w| &w.docs[d].lambda);
            e_step_with_prior(doc, &row, params, &prior, init, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VariationalPosterior { docs })
}

/// Closed-form parameter updates given the current variational posteriors.
/// `current` supplies the topic-word probabilities used for the per-token
/// responsibilities.
pub fn m_step(
    corpus: &Corpus,
    posterior: &VariationalPosterior,
    x: &DMatrix<f64>,
    current: &StmParams,
) -> Result<StmParams> {
    let d = corpus.num_documents();
    if posterior.num_documents() != d || x.nrows() != d {
        return Err(Error::Data(format!(
            "m-step needs {d} posteriors and design rows, got {} and {}",
            posterior.num_documents(),
            x.nrows()
        )));
    }
    let k = current.num_topics();
    let km1 = k - 1;
    let lambda = DMatrix::from_fn(d, km1, |i, j| posterior.docs[i].lambda[j]);

    let xtx = x.transpose() * x;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("X^T X is singular in the m-step".into()))?;
    let gamma = chol.solve(&(x.transpose() * &lambda));

    let fitted = x * &gamma;
    let mut sigma = DMatrix::zeros(km1, km1);
    for (i, doc) in posterior.docs.iter().enumerate() {
        let r = DVector::from_fn(km1, |j, _| doc.lambda[j] - fitted[(i, j)]);
        sigma += &doc.sigma + &r * r.transpose();
    }
    sigma /= d as f64;
    symmetrize(&mut sigma);

    let v = corpus.vocab_size();
    let mut counts = DMatrix::zeros(k, v);
    let mut resp = vec![0.0; k];
    for (doc, post) in corpus.documents.iter().zip(&posterior.docs) {
        let theta = softmax_eta(post.lambda.as_slice());
        for &(w, c) in doc.counts() {
            let col = current.beta.column(w);
            let mut p = 0.0;
            for j in 0..k {
                resp[j] = theta[j] * col[j];
                p += resp[j];
            }
            if p > 0.0 {
                let scale = c as f64 / p;
                for j in 0..k {
                    counts[(j, w)] += resp[j] * scale;
                }
            }
        }
    }
    for mut row in counts.row_iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 && s.is_finite() {
            row /= s;
        } else {
            row.fill(1.0 / v as f64);
        }
    }
    Ok(StmParams { gamma, sigma, beta: counts })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_em_iterations: usize,
    /// Relative change of the aggregate objective that counts as converged.
    pub tolerance: f64,
    pub seed: u64,
    pub init: InitMethod,
    /// Dirichlet concentration for the random topic-word initialization.
    pub init_concentration: f64,
    pub estep: EStepConfig,
}

/// How the topic-word matrix is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Anchor words; falls back to `Random` when the vocabulary is too
    /// large or no independent anchors exist.
    Spectral,
    Random,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_em_iterations: 200,
            tolerance: 1e-5,
            seed: 0,
            init: InitMethod::Spectral,
            init_concentration: 0.1,
            estep: EStepConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_em_iterations < 1 {
            return Err(Error::Config("max_em_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) || !(self.estep.grad_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.estep.max_iterations < 1 {
            return Err(Error::Config("estep.max_iterations must be at least 1".into()));
        }
        if !(self.init_concentration > 0.0) {
            return Err(Error::Config("init_concentration must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// Aggregate Laplace objective after each E-step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Documents whose E-step optimizer stopped short in the final iteration.
    pub nonconverged_documents: usize,
    /// Largest Hessian jitter used in the final E-step.
    pub max_jitter: f64,
    /// Initialization actually used.
    pub init: InitMethod,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: StmParams,
    pub posterior: VariationalPosterior,
    pub report: FitReport,
}

/// Random starting point: `B` rows from Dirichlet(concentration), zero
/// `Gamma`, identity `Sigma`.
pub fn initial_params(p: usize, k: usize, v: usize, concentration: f64, stream: Substream) -> StmParams {
    let mut rng = stream.rng();
    let gamma_dist = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut beta = DMatrix::zeros(k, v);
    for j in 0..k {
        let mut total = 0.0;
        for w in 0..v {
            let g: f64 = gamma_dist.sample(&mut rng).max(f64::MIN_POSITIVE);
            beta[(j, w)] = g;
            total += g;
        }
        for w in 0..v {
            beta[(j, w)] /= total;
        }
    }
    StmParams {
        gamma: DMatrix::zeros(p, k - 1),
        sigma: DMatrix::identity(k - 1, k - 1),
        beta,
    }
}

const SPECTRAL_SMOOTHING: f64 = 0.01;

pub fn fit(corpus: &Corpus, x: &DMatrix<f64>, k: usize, cfg: &FitConfig) -> Result<FitOutput> {
    if k < 2 {
        return Err(Error::Config(format!("number of topics must be at least 2, got {k}")));
    }
    cfg.validate()?;
    if x.nrows() != corpus.num_documents() {
        return Err(Error::Data(format!(
            "design matrix has {} rows for {} documents",
            x.nrows(),
            corpus.num_documents()
        )));
    }
    let start = Instant::now();
    let mut init = initial_params(
        x.ncols(),
        k,
        corpus.vocab_size(),
        cfg.init_concentration,
        Substream::new(cfg.seed).child(tag::INIT),
    );
    let mut method = InitMethod::Random;
    if cfg.init == InitMethod::Spectral {
        if let Ok(beta) = anchor_topics(corpus, k) {
            // a little uniform mass so EM can still move entries that
            // the anchor solution set to zero
            let v = corpus.vocab_size() as f64;
            init.beta = beta.map(|b| (1.0 - SPECTRAL_SMOOTHING) * b + SPECTRAL_SMOOTHING / v);
            method = InitMethod::Spectral;
        }
    }
    fit_from(corpus, x, init, cfg).map(|mut out| {
        out.report.wall_time = start.elapsed();
        out.report.init = method;
        out
    })
}

/// EM iterations from explicit starting parameters.
pub fn fit_from(corpus: &Corpus, x: &DMatrix<f64>, init: StmParams, cfg: &FitConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut params = init;
    let mut posterior: Option<VariationalPosterior> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_em_iterations {
        iterations += 1;
        let post = e_step(corpus, x, &params, posterior.as_ref(), &cfg.estep)?;
        let bound = post.bound();
        params = m_step(corpus, &post, x, &params)?;
        posterior = Some(post);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if ((bound - prev) / prev.abs()).abs() < cfg.tolerance {
                converged = true;
            }
        }
        trace.push(bound);
        if converged {
            break;
        }
    }
    let posterior = posterior.expect("at least one EM iteration");
    let report = FitReport {
        iterations,
        objective_trace: trace,
        converged,
        nonconverged_documents: posterior.nonconverged(),
        max_jitter: posterior.docs.iter().map(|d| d.jitter).fold(0.0, f64::max),
        init: InitMethod::Random,
        wall_time: start.elapsed(),
    };
    Ok(FitOutput { params, posterior, report })
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk record of a fitted model and its variational posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub formula: String,
    pub num_documents: usize,
    pub num_covariates: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub vocabulary: Vec<String>,
    pub doc_ids: Vec<String>,
    /// P rows of K-1 values.
    pub gamma: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// K rows of V values.
    pub beta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub sigma_d: Vec<Vec<Vec<f64>>>,
    pub doc_objective: Vec<f64>,
    pub doc_converged: Vec<bool>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Data(format!("checkpoint field '{what}' is not {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl Checkpoint {
    pub fn new(formula: &str, corpus: &Corpus, params: &StmParams, posterior: &VariationalPosterior) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            formula: formula.to_owned(),
            num_documents: corpus.num_documents(),
            num_covariates: params.num_covariates(),
            num_topics: params.num_topics(),
            vocab_size: params.vocab_size(),
            vocabulary: corpus.vocabulary.terms().to_vec(),
            doc_ids: corpus.doc_ids(),
            gamma: rows_of(&params.gamma),
            sigma: rows_of(&params.sigma),
            beta: rows_of(&params.beta),
            lambda: posterior.docs.iter().map(|d| d.lambda.iter().copied().collect()).collect(),
            sigma_d: posterior.docs.iter().map(|d| rows_of(&d.sigma)).collect(),
            doc_objective: posterior.docs.iter().map(|d| d.objective).collect(),
            doc_converged: posterior.docs.iter().map(|d| d.converged).collect(),
        }
    }

    pub fn params(&self) -> Result<StmParams> {
        let k = self.num_topics;
        if k < 2 {
            return Err(Error::Data("checkpoint has fewer than 2 topics".into()));
        }
        let params = StmParams {
            gamma: matrix_from(&self.gamma, self.num_covariates, k - 1, "gamma")?,
            sigma: matrix_from(&self.sigma, k - 1, k - 1, "sigma")?,
            beta: matrix_from(&self.beta, k, self.vocab_size, "beta")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn posterior(&self) -> Result<VariationalPosterior> {
        let km1 = self.num_topics - 1;
        let d = self.num_documents;
        if self.lambda.len() != d || self.sigma_d.len() != d || self.doc_objective.len() != d || self.doc_converged.len() != d {
            return Err(Error::Data(format!("checkpoint posterior does not cover {d} documents")));
        }
        let docs = (0..d)
            .map(|i| {
                if self.lambda[i].len() != km1 {
                    return Err(Error::Data(format!("checkpoint lambda row {i} has wrong length")));
                }
                Ok(DocPosterior {
                    lambda: DVector::from_column_slice(&self.lambda[i]),
                    sigma: matrix_from(&self.sigma_d[i], km1, km1, "sigma_d")?,
                    objective: self.doc_objective[i],
                    converged: self.doc_converged[i],
                    iterations: 0,
                    jitter: 0.0,
                    trace: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VariationalPosterior { docs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        if ck.vocabulary.len() != ck.vocab_size || ck.doc_ids.len() != ck.num_documents {
            return Err(Error::Data("checkpoint vocabulary or document ids have wrong length".into()));
        }
        ck.params()?;
        ck.posterior()?;
        Ok(ck)
    }
}
