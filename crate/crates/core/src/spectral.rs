//! Anchor-word initialization of the topic-word matrix.
//!
//! Builds the expected word co-occurrence matrix, picks `K` anchor words by
//! greedy farthest-point search on its row-normalized rows, expresses every
//! word's co-occurrence profile as a convex combination of the anchors'
//! profiles, and turns those weights into topic-word probabilities by Bayes'
//! rule. Deterministic, and far less prone to poor local optima than random
//! starts.

use nalgebra::{DMatrix, DVector};

use crate::corpus::Corpus;
use crate::{Error, Result};

/// Largest vocabulary for which the dense V x V co-occurrence matrix is built.
pub const MAX_SPECTRAL_VOCAB: usize = 5000;

/// Word co-occurrence matrix: for each document with `n >= 2` tokens,
/// `(w w^T - diag(w)) / (n (n - 1))`, averaged over documents.
fn cooccurrence(corpus: &Corpus) -> DMatrix<f64> {
    let v = corpus.vocab_size();
    let mut q = DMatrix::zeros(v, v);
    let mut used = 0usize;
    for doc in &corpus.documents {
        let n = doc.total_tokens() as f64;
        if n < 2.0 {
            continue;
        }
        used += 1;
        let norm = 1.0 / (n * (n - 1.0));
        let counts = doc.counts();
        for &(a, ca) in counts {
            for &(b, cb) in counts {
                let c = if a == b { ca as f64 * (ca as f64 - 1.0) } else { ca as f64 * cb as f64 };
                q[(a, b)] += c * norm;
            }
        }
    }
    if used > 0 {
        q /= used as f64;
    }
    q
}

/// Greedy Gram–Schmidt selection of `k` rows spanning the most volume.
fn select_anchors(rows: &DMatrix<f64>, candidates: &[usize], k: usize) -> Vec<usize> {
    let v = rows.ncols();
    let mut residual: Vec<DVector<f64>> = candidates.iter().map(|&i| rows.row(i).transpose()).collect();
    let mut anchors = Vec::with_capacity(k);
    for _ in 0..k {
        let (best, norm2) = residual
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.norm_squared()))
            .fold((usize::MAX, -1.0), |acc, (i, n)| if n > acc.1 { (i, n) } else { acc });
        if best == usize::MAX || norm2 <= 0.0 {
            break;
        }
        anchors.push(candidates[best]);
        let basis = &residual[best] / norm2.sqrt();
        for r in residual.iter_mut() {
            let proj = r.dot(&basis);
            r.axpy(-proj, &basis, 1.0);
        }
        debug_assert_eq!(basis.len(), v);
    }
    anchors
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(y: &mut [f64]) {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    y.iter_mut().for_each(|v| *v = (*v - tau).max(0.0));
}

/// Minimize `c^T G c - 2 c^T h` over the simplex by accelerated projected
/// gradient.
fn simplex_least_squares(g: &DMatrix<f64>, h: &DVector<f64>, lipschitz: f64) -> Vec<f64> {
    let k = h.len();
    let mut c = vec![1.0 / k as f64; k];
    let mut z = c.clone();
    let mut t = 1.0f64;
    let step = 1.0 / lipschitz;
    for _ in 0..1000 {
        let zv = DVector::from_column_slice(&z);
        let grad = (g * &zv - h) * 2.0;
        let mut next: Vec<f64> = (0..k).map(|i| z[i] - step * grad[i]).collect();
        project_simplex(&mut next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        let delta: f64 = next.iter().zip(&c).map(|(a, b)| (a - b).abs()).sum();
        z = (0..k).map(|i| next[i] + momentum * (next[i] - c[i])).collect();
        c = next;
        t = t_next;
        if delta < 1e-12 {
            break;
        }
    }
    c
}

/// `K x V` topic-word matrix from anchor words.
pub fn anchor_topics(corpus: &Corpus, k: usize) -> Result<DMatrix<f64>> {
    let v = corpus.vocab_size();
    if k > v {
        return Err(Error::Config(format!("cannot find {k} anchor words in a vocabulary of {v}")));
    }
    if v > MAX_SPECTRAL_VOCAB {
        return Err(Error::Config(format!(
            "vocabulary of {v} words exceeds the anchor-word limit of {MAX_SPECTRAL_VOCAB}"
        )));
    }
    let q = cooccurrence(corpus);
    let marginal: Vec<f64> = q.row_iter().map(|r| r.sum()).collect();
    let mut rows = q.clone();
    for (i, mut r) in rows.row_iter_mut().enumerate() {
        if marginal[i] > 0.0 {
            r /= marginal[i];
        }
    }
    let candidates: Vec<usize> = (0..v).filter(|&i| marginal[i] > 0.0).collect();
    let anchors = select_anchors(&rows, &candidates, k);
    if anchors.len() < k {
        return Err(Error::Numerical(format!("only {} independent anchor words for {k} topics", anchors.len())));
    }
    let s = DMatrix::from_fn(k, v, |a, j| rows[(anchors[a], j)]);
    let g = &s * s.transpose();
    let lipschitz = 2.0 * g.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let sq = &s * rows.transpose();
    let mut beta = DMatrix::zeros(k, v);
    for i in 0..v {
        if marginal[i] <= 0.0 {
            continue;
        }
        let c = simplex_least_squares(&g, &sq.column(i).into_owned(), lipschitz);
        for (j, cj) in c.into_iter().enumerate() {
            beta[(j, i)] = cj * marginal[i];
        }
    }
    for mut row in beta.row_iter_mut() {
        let total: f64 = row.sum();
        if total > 0.0 {
            row /= total;
        } else {
            row.fill(1.0 / v as f64);
        }
    }
    Ok(beta)
}
