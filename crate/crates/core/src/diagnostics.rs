//! Model-selection metrics for choosing the number of topics: held-out
//! likelihood by document completion, semantic coherence, FREX-style
//! exclusivity and multinomial residual dispersion.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::rng::{tag, Substream};
use crate::topic_model::{e_step_with_prior, fit, softmax_eta, EStepConfig, FitConfig, PriorTerms, StmParams, VariationalPosterior};
use crate::{Error, Result};

pub const DEFAULT_TOP_WORDS: usize = 10;
pub const DEFAULT_FREX_WEIGHT: f64 = 0.7;
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.1;
/// Cells whose expected word probability falls below this are left out of
/// the dispersion statistic.
pub const DEFAULT_DISPERSION_TOL: f64 = 0.01;

/// A held-out document split into an observed half and a scored half.
#[derive(Debug, Clone)]
pub struct CompletionDoc {
    pub row: usize,
    pub observed: Document,
    pub scored: Vec<(usize, u32)>,
}

#[derive(Debug, Clone)]
pub struct HeldoutSplit {
    pub train_rows: Vec<usize>,
    pub test: Vec<CompletionDoc>,
    /// Held-out documents with fewer than two usable tokens.
    pub skipped: usize,
}

fn to_counts(tokens: &[usize]) -> Vec<(usize, u32)> {
    let mut sorted = tokens.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(usize, u32)> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// Hold out `fraction` of the documents and split each one's tokens in half
/// at random. Tokens of words that never occur in the training documents are
/// dropped, since a fitted model assigns them probability zero.
pub fn heldout_split(corpus: &Corpus, fraction: f64, stream: &Substream) -> Result<HeldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("held-out fraction must lie in (0, 1), got {fraction}")));
    }
    let d = corpus.num_documents();
    let n_test = ((d as f64 * fraction).round() as usize).clamp(1, d.saturating_sub(2).max(1));
    if d < 3 {
        return Err(Error::Data("held-out evaluation needs at least 3 documents".into()));
    }
    let mut rng = stream.child(tag::HELDOUT).rng();
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);
    let mut test_rows = order[..n_test].to_vec();
    let mut train_rows = order[n_test..].to_vec();
    test_rows.sort_unstable();
    train_rows.sort_unstable();

    let mut seen = vec![false; corpus.vocab_size()];
    for &r in &train_rows {
        for &(v, _) in corpus.documents[r].counts() {
            seen[v] = true;
        }
    }
    let mut test = Vec::new();
    let mut skipped = 0;
    for &r in &test_rows {
        let doc = &corpus.documents[r];
        let mut tokens: Vec<usize> = doc.tokens().filter(|&v| seen[v]).collect();
        if tokens.len() < 2 {
            skipped += 1;
            continue;
        }
        tokens.shuffle(&mut rng);
        let half = tokens.len() / 2;
        let observed = Document::new(doc.id.clone(), to_counts(&tokens[..half]))?;
        test.push(CompletionDoc { row: r, observed, scored: to_counts(&tokens[half..]) });
    }
    Ok(HeldoutSplit { train_rows, test, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScore {
    /// Mean log-probability per scored token.
    pub per_token: f64,
    pub documents: usize,
    pub tokens: u64,
    pub skipped: usize,
}

/// Document completion: infer each held-out document's proportions from its
/// observed half, then score the other half under `theta_hat B`.
pub fn heldout_score(
    params: &StmParams,
    x: &DMatrix<f64>,
    test: &[CompletionDoc],
    skipped: usize,
    cfg: &EStepConfig,
) -> Result<HeldoutScore> {
    let prior = PriorTerms::new(&params.sigma)?;
    let per_doc = test
        .par_iter()
        .map(|doc| {
            let row: Vec<f64> = x.row(doc.row).iter().copied().collect();
            let post = e_step_with_prior(&doc.observed, &row, params, &prior, None, cfg)?;
            let theta = softmax_eta(post.lambda.as_slice());
            let mut ll = 0.0;
            let mut n = 0u64;
            for &(v, c) in &doc.scored {
                let p: f64 = theta.iter().zip(params.beta.column(v).iter()).map(|(t, b)| t * b).sum();
                ll += c as f64 * p.ln();
                n += c as u64;
            }
            Ok((ll, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let tokens: u64 = per_doc.iter().map(|p| p.1).sum();
    if tokens == 0 {
        return Err(Error::Data("no held-out tokens to score".into()));
    }
    let total: f64 = per_doc.iter().map(|p| p.0).sum();
    Ok(HeldoutScore { per_token: total / tokens as f64, documents: per_doc.len(), tokens, skipped })
}

/// Fit on the training documents and score the held-out halves.
pub fn heldout_likelihood(
    corpus: &Corpus,
    x: &DMatrix<f64>,
    k: usize,
    cfg: &FitConfig,
    fraction: f64,
    stream: &Substream,
) -> Result<HeldoutScore> {
    let split = heldout_split(corpus, fraction, stream)?;
    let train = corpus.select(&split.train_rows);
    let x_train = x.select_rows(&split.train_rows);
    let out = fit(&train, &x_train, k, cfg)?;
    heldout_score(&out.params, x, &split.test, split.skipped, &cfg.estep)
}

/// Indices of the `m` largest entries of a row, largest first (ties by index).
pub fn top_words(beta: &DMatrix<f64>, topic: usize, m: usize) -> Vec<usize> {
    let row = beta.row(topic);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    /// Word pairs skipped because the higher-ranked word has no documents.
    pub skipped_pairs: usize,
}

impl Coherence {
    pub fn mean(&self) -> f64 {
        self.per_topic.iter().sum::<f64>() / self.per_topic.len() as f64
    }
}

/// Co-document-frequency coherence of each topic's top `m` words:
/// `sum_{i >= 2} sum_{j < i} ln((DF(v_i, v_j) + 1) / DF(v_j))`.
pub fn semantic_coherence(beta: &DMatrix<f64>, corpus: &Corpus, m: usize) -> Result<Coherence> {
    if m < 2 {
        return Err(Error::Config("coherence needs at least 2 top words".into()));
    }
    if beta.ncols() != corpus.vocab_size() {
        return Err(Error::Data("topic-word matrix and corpus vocabulary differ in size".into()));
    }
    let v = corpus.vocab_size();
    let tops: Vec<Vec<usize>> = (0..beta.nrows()).map(|k| top_words(beta, k, m.min(v))).collect();
    // slot for each word that appears in some top list
    let mut slot = vec![usize::MAX; v];
    let mut words = Vec::new();
    for &w in tops.iter().flatten() {
        if slot[w] == usize::MAX {
            slot[w] = words.len();
            words.push(w);
        }
    }
    let n = words.len();
    let mut co = vec![0u64; n * n];
    let mut present = Vec::new();
    for doc in &corpus.documents {
        present.clear();
        present.extend(doc.counts().iter().filter(|(w, _)| slot[*w] != usize::MAX).map(|(w, _)| slot[*w]));
        for &a in &present {
            for &b in &present {
                co[a * n + b] += 1;
            }
        }
    }
    let mut skipped_pairs = 0;
    let per_topic = tops
        .iter()
        .map(|top| {
            let mut total = 0.0;
            for i in 1..top.len() {
                for j in 0..i {
                    let (a, b) = (slot[top[i]], slot[top[j]]);
                    let df_j = co[b * n + b];
                    if df_j == 0 {
                        skipped_pairs += 1;
                        continue;
                    }
                    total += ((co[a * n + b] + 1) as f64 / df_j as f64).ln();
                }
            }
            total
        })
        .collect();
    Ok(Coherence { per_topic, skipped_pairs })
}

/// `B[k, v] / sum_k' B[k', v]`: the share of word `v`'s mass owned by topic `k`.
pub fn exclusivity_ratios(beta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = beta.clone();
    for mut col in out.column_iter_mut() {
        let s: f64 = col.iter().sum();
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(1.0 / beta.nrows() as f64);
        }
    }
    out
}

/// Ranks (1-based, ties averaged) divided by the number of entries.
fn scaled_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg / n as f64;
        }
        i = j + 1;
    }
    ranks
}

/// FREX score of each topic's top `m` words, averaged: the weighted harmonic
/// mean of the word's exclusivity rank and frequency rank within the topic,
/// `1 / (w / ex + (1 - w) / fr)`.
pub fn exclusivity(beta: &DMatrix<f64>, m: usize, frex_weight: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&frex_weight) {
        return Err(Error::Config(format!("FREX weight must lie in [0, 1], got {frex_weight}")));
    }
    if m < 1 {
        return Err(Error::Config("exclusivity needs at least 1 top word".into()));
    }
    let ratios = exclusivity_ratios(beta);
    Ok((0..beta.nrows())
        .map(|k| {
            let ex = scaled_ranks(&ratios.row(k).iter().copied().collect::<Vec<_>>());
            let fr = scaled_ranks(&beta.row(k).iter().copied().collect::<Vec<_>>());
            let top = top_words(beta, k, m);
            top.iter().map(|&v| 1.0 / (frex_weight / ex[v] + (1.0 - frex_weight) / fr[v])).sum::<f64>()
                / top.len() as f64
        })
        .collect())
}

/// Multinomial dispersion of the counts around `theta(lambda_d) B`.
///
/// Pearson residuals `(x_dv - N_d q_dv)^2 / (N_d q_dv (1 - q_dv))` are
/// summed over cells with `q_dv >= tol` and divided by the number of such
/// cells minus `D (K - 1) + K (V - 1)`, the free parameters of `theta` and
/// `B`. When the model fits, each cell contributes about one, so values
/// well above one point at too few topics.
pub fn residual_dispersion(
    params: &StmParams,
    posterior: &VariationalPosterior,
    corpus: &Corpus,
    tol: f64,
) -> Result<f64> {
    let d = corpus.num_documents();
    if posterior.num_documents() != d {
        return Err(Error::Data("posterior and corpus differ in document count".into()));
    }
    let k = params.num_topics();
    let v = params.vocab_size();
    // per-document partials are collected in order and summed sequentially
    // so the result does not depend on the thread count
    let partials: Vec<(f64, u64)> = corpus
        .documents
        .par_iter()
        .zip(&posterior.docs)
        .map(|(doc, post)| {
            let theta = softmax_eta(post.lambda.as_slice());
            let n = doc.total_tokens() as f64;
            let counts = doc.counts();
            let mut ci = 0;
            let mut sum = 0.0;
            let mut cells = 0u64;
            for w in 0..v {
                let x = if ci < counts.len() && counts[ci].0 == w {
                    ci += 1;
                    counts[ci - 1].1 as f64
                } else {
                    0.0
                };
                let q: f64 = (0..k).map(|j| theta[j] * params.beta[(j, w)]).sum();
                if q < tol || q >= 1.0 {
                    continue;
                }
                let m = n * q;
                sum += (x - m).powi(2) / (m * (1.0 - q));
                cells += 1;
            }
            (sum, cells)
        })
        .collect();
    let sum: f64 = partials.iter().map(|p| p.0).sum();
    let cells: u64 = partials.iter().map(|p| p.1).sum();
    let dof = (d * (k - 1) + k * (v - 1)) as f64;
    let denom = cells as f64 - dof;
    if cells == 0 {
        return Err(Error::Data("no cells above the dispersion tolerance".into()));
    }
    // with too few cells for the parameter count, fall back to no correction
    let denom = if denom > 0.0 { denom } else { cells as f64 };
    Ok(sum / denom)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchKConfig {
    pub fit: FitConfig,
    pub heldout_fraction: f64,
    pub top_words: usize,
    pub frex_weight: f64,
    pub dispersion_tol: f64,
}

impl Default for SearchKConfig {
    fn default() -> Self {
        SearchKConfig {
            fit: FitConfig::default(),
            heldout_fraction: DEFAULT_HELDOUT_FRACTION,
            top_words: DEFAULT_TOP_WORDS,
            frex_weight: DEFAULT_FREX_WEIGHT,
            dispersion_tol: DEFAULT_DISPERSION_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearchRow {
    pub k: usize,
    pub heldout: f64,
    pub coherence_mean: f64,
    pub exclusivity_mean: f64,
    pub dispersion: f64,
    pub em_iterations: usize,
    pub converged: bool,
    /// Set when the fit for this K failed; metrics are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearchReport {
    pub seed: u64,
    pub rows: Vec<KSearchRow>,
}

fn evaluate_k(corpus: &Corpus, x: &DMatrix<f64>, k: usize, cfg: &SearchKConfig) -> Result<KSearchRow> {
    let out = fit(corpus, x, k, &cfg.fit)?;
    let stream = Substream::new(cfg.fit.seed).at(tag::SEARCH_K, k as u64);
    let heldout = heldout_likelihood(corpus, x, k, &cfg.fit, cfg.heldout_fraction, &stream)?;
    let coherence = semantic_coherence(&out.params.beta, corpus, cfg.top_words)?;
    let excl = exclusivity(&out.params.beta, cfg.top_words, cfg.frex_weight)?;
    let dispersion = residual_dispersion(&out.params, &out.posterior, corpus, cfg.dispersion_tol)?;
    Ok(KSearchRow {
        k,
        heldout: heldout.per_token,
        coherence_mean: coherence.mean(),
        exclusivity_mean: excl.iter().sum::<f64>() / excl.len() as f64,
        dispersion,
        em_iterations: out.report.iterations,
        converged: out.report.converged,
        error: None,
    })
}

/// Fit and evaluate every K (in parallel). A failing K is reported with NaN
/// metrics and its error message; rows are sorted by K.
pub fn search_k(corpus: &Corpus, x: &DMatrix<f64>, ks: &[usize], cfg: &SearchKConfig) -> Result<KSearchReport> {
    if ks.is_empty() {
        return Err(Error::Config("empty list of topic counts".into()));
    }
    if let Some(k) = ks.iter().find(|k| **k < 2) {
        return Err(Error::Config(format!("number of topics must be at least 2, got {k}")));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let rows = ks
        .par_iter()
        .map(|&k| {
            evaluate_k(corpus, x, k, cfg).unwrap_or_else(|e| KSearchRow {
                k,
                heldout: f64::NAN,
                coherence_mean: f64::NAN,
                exclusivity_mean: f64::NAN,
                dispersion: f64::NAN,
                em_iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            })
        })
        .collect();
    Ok(KSearchReport { seed: cfg.fit.seed, rows })
}

impl KSearchReport {
    /// Columns `K, heldout, coherence_mean, exclusivity_mean, dispersion`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Data(format!("writing K search report: {e}"));
        w.write_record(["K", "heldout", "coherence_mean", "exclusivity_mean", "dispersion"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.heldout.to_string(),
                r.coherence_mean.to_string(),
                r.exclusivity_mean.to_string(),
                r.dispersion.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing K search report: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
