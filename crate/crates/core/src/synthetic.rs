//! Ground-truth simulation from the prevalence-covariate generative model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Column, CovariateTable, Corpus, Document, Vocabulary};
use crate::linalg::cholesky_with_jitter;
use crate::rng::{tag, Substream};
use crate::topic_model::softmax_eta;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub documents: usize,
    /// P x (K-1); row 0 is the intercept, row p >= 1 multiplies covariate `x{p}`.
    pub gamma: DMatrix<f64>,
    /// (K-1) x (K-1), symmetric positive definite.
    pub sigma: DMatrix<f64>,
    /// K x V topic-word probabilities.
    pub beta: DMatrix<f64>,
    /// Mean of the Poisson document length (lengths are floored at 1).
    pub mean_tokens: f64,
    pub seed: u64,
}

/// Everything the generator drew, for recovery checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub gamma: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// D rows of K topic proportions.
    pub theta: Vec<Vec<f64>>,
}

impl SyntheticSpec {
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
        if self.documents == 0 || self.vocab_size() == 0 || k < 2 || self.num_covariates() == 0 {
            return Err(Error::Config("D, V, P must be positive and K at least 2".into()));
        }
        if self.gamma.ncols() != k - 1 || self.sigma.shape() != (k - 1, k - 1) {
            return Err(Error::Config("Gamma must be P x (K-1) and Sigma (K-1) x (K-1)".into()));
        }
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-12 || self.sigma.clone().cholesky().is_none() {
            return Err(Error::Config("Sigma must be symmetric positive definite".into()));
        }
        for (r, row) in self.beta.row_iter().enumerate() {
            if row.iter().any(|&b| !(b >= 0.0)) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("row {r} of B is not a probability vector")));
            }
        }
        if !(self.mean_tokens > 0.0) {
            return Err(Error::Config("mean_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Topic-word matrix whose topics own disjoint, equally sized vocabulary
/// blocks; within a block word weights decay geometrically by `decay`.
pub fn block_topics(k: usize, words_per_topic: usize, decay: f64) -> DMatrix<f64> {
    let v = k * words_per_topic;
    let mut beta = DMatrix::zeros(k, v);
    let norm: f64 = (0..words_per_topic).map(|i| decay.powi(i as i32)).sum();
    for j in 0..k {
        for i in 0..words_per_topic {
            beta[(j, j * words_per_topic + i)] = decay.powi(i as i32) / norm;
        }
    }
    beta
}

pub fn term_name(v: usize, vocab_size: usize) -> String {
    let width = vocab_size.saturating_sub(1).to_string().len().max(4);
    format!("w{v:0width$}")
}

pub fn doc_name(d: usize, documents: usize) -> String {
    let width = documents.saturating_sub(1).to_string().len().max(5);
    format!("d{d:0width$}")
}

/// Simulate a corpus: covariates `x{p} ~ Uniform(0, 1)`,
/// `eta_d ~ Normal(Gamma^T x_d, Sigma)`, `theta_d = softmax([eta_d, 0])`,
/// then each token's topic from `theta_d` and its word from that topic's row.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let (d_count, k, v, p) = (spec.documents, spec.num_topics(), spec.vocab_size(), spec.num_covariates());
    let mut rng = Substream::new(spec.seed).child(tag::GENERATE).rng();
    let (chol, _) = cholesky_with_jitter(&spec.sigma)?;
    let l = chol.l();
    let word_tables = spec
        .beta
        .row_iter()
        .map(|row| WeightedIndex::<f64>::new(row.iter().copied()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("topic-word row: {e}")))?;
    let lengths = Poisson::new(spec.mean_tokens).map_err(|e| Error::Config(e.to_string()))?;

    let mut covariates = vec![Vec::with_capacity(d_count); p - 1];
    let mut documents = Vec::with_capacity(d_count);
    let mut thetas = Vec::with_capacity(d_count);
    for d in 0..d_count {
        let mut x = vec![1.0];
        for col in covariates.iter_mut() {
            let u: f64 = rng.random();
            col.push(u);
            x.push(u);
        }
        let mean = DVector::from_fn(k - 1, |j, _| (0..p).map(|q| x[q] * spec.gamma[(q, j)]).sum());
        let z = DVector::from_fn(k - 1, |_, _| StandardNormal.sample(&mut rng));
        let eta = mean + &l * z;
        let theta = softmax_eta(eta.as_slice());
        let topic_table = WeightedIndex::<f64>::new(theta.iter().copied()).map_err(|e| Error::Numerical(e.to_string()))?;
        let n = (lengths.sample(&mut rng) as u64).max(1);
        let mut counts = vec![0u32; v];
        for _ in 0..n {
            let topic = topic_table.sample(&mut rng);
            counts[word_tables[topic].sample(&mut rng)] += 1;
        }
        let doc = Document::new(
            doc_name(d, d_count),
            counts.into_iter().enumerate().filter(|&(_, c)| c > 0),
        )?;
        documents.push(doc);
        thetas.push(theta);
    }
    let vocabulary = Vocabulary::new((0..v).map(|w| term_name(w, v)).collect())?;
    let columns = covariates
        .into_iter()
        .enumerate()
        .map(|(i, vals)| Column::numeric(format!("x{}", i + 1), vals))
        .collect();
    let table = CovariateTable::new(d_count, columns)?;
    let corpus = Corpus::new(vocabulary, documents, table)?;
    let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
    let truth = GroundTruth {
        gamma: rows(&spec.gamma),
        sigma: rows(&spec.sigma),
        beta: rows(&spec.beta),
        theta: thetas,
    };
    Ok((corpus, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, gamma: DMatrix<f64>, sigma_scale: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            documents: 200,
            gamma,
            sigma: DMatrix::identity(k - 1, k - 1) * sigma_scale,
            beta: block_topics(k, 5, 0.8),
            mean_tokens: 50.0,
            seed,
        }
    }

    #[test]
    fn zero_gamma_tiny_sigma_gives_uniform_theta() {
        let (_, truth) = generate_synthetic(&spec(2, DMatrix::zeros(1, 1), 1e-24, 1)).unwrap();
        for t in &truth.theta {
            assert!((t[0] - 0.5).abs() < 1e-9 && (t[1] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_blocks_keep_topic_vocabulary() {
        // topic 1 dominates every document: eta = +40
        let (corpus, _) = generate_synthetic(&spec(2, DMatrix::from_element(1, 1, 40.0), 1e-6, 2)).unwrap();
        for doc in &corpus.documents {
            assert!(doc.counts().iter().all(|&(v, _)| v < 5), "{:?}", doc.counts());
        }
    }

    #[test]
    fn thetas_lie_in_open_simplex_and_lengths_positive() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 1.0]);
        let (corpus, truth) = generate_synthetic(&spec(3, g, 1.0, 3)).unwrap();
        for t in &truth.theta {
            assert!(t.iter().all(|&x| x > 0.0 && x < 1.0));
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(corpus.documents.iter().all(|d| d.total_tokens() >= 1));
        assert_eq!(corpus.covariates.columns().len(), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 1.0]);
        let a = generate_synthetic(&spec(3, g.clone(), 1.0, 9)).unwrap().0;
        let b = generate_synthetic(&spec(3, g, 1.0, 9)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_invalid_spec() {
        let mut s = spec(3, DMatrix::zeros(1, 2), 1.0, 0);
        s.sigma[(0, 1)] = 5.0;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(3, DMatrix::zeros(1, 2), 1.0, 0);
        s.beta[(0, 0)] += 0.1;
        assert!(generate_synthetic(&s).is_err());
    }
}
