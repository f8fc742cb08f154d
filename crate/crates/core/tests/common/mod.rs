#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use topicmeta::corpus::Corpus;
use topicmeta::synthetic::{block_topics, generate_synthetic, GroundTruth, SyntheticSpec};
use topicmeta::topic_model::{DocPosterior, VariationalPosterior};

/// Posterior with the given modes and a shared covariance.
pub fn posterior(lambdas: &[Vec<f64>], sigma: &DMatrix<f64>) -> VariationalPosterior {
    let docs = lambdas
        .iter()
        .map(|l| DocPosterior {
            lambda: DVector::from_column_slice(l),
            sigma: sigma.clone(),
            objective: 0.0,
            converged: true,
            iterations: 0,
            jitter: 0.0,
            trace: Vec::new(),
        })
        .collect();
    VariationalPosterior { docs }
}

pub fn matrix(rows: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Block-topic corpus with `Sigma = sigma_scale * I`.
pub fn corpus(k: usize, words_per_topic: usize, documents: usize, gamma: DMatrix<f64>, sigma_scale: f64, mean_tokens: f64, seed: u64) -> (Corpus, GroundTruth) {
    let spec = SyntheticSpec {
        documents,
        gamma,
        sigma: DMatrix::identity(k - 1, k - 1) * sigma_scale,
        beta: block_topics(k, words_per_topic, 0.8),
        mean_tokens,
        seed,
    };
    generate_synthetic(&spec).unwrap()
}

pub fn truth_beta(truth: &GroundTruth) -> DMatrix<f64> {
    let k = truth.beta.len();
    DMatrix::from_fn(k, truth.beta[0].len(), |i, j| truth.beta[i][j])
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Total-variation distance of each fitted row to its matched true row,
/// under the permutation minimizing the worst row.
pub fn matched_tv(fitted: &DMatrix<f64>, truth: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let k = truth.nrows();
    let tv = |a: usize, b: usize| 0.5 * (0..truth.ncols()).map(|v| (fitted[(a, v)] - truth[(b, v)]).abs()).sum::<f64>();
    permutations(k)
        .into_iter()
        .map(|p| {
            let rows: Vec<f64> = (0..k).map(|i| tv(p[i], i)).collect();
            (p, rows)
        })
        .min_by(|a, b| {
            let ma = a.1.iter().cloned().fold(0.0, f64::max);
            let mb = b.1.iter().cloned().fold(0.0, f64::max);
            ma.total_cmp(&mb)
        })
        .unwrap()
}
