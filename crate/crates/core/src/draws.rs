//! Sampling topic proportions from the variational posterior, plus the
//! line-delimited draws file used to exchange samples with other tools.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::cholesky_with_jitter;
use crate::rng::{tag, StreamRng, Substream};
use crate::topic_model::{softmax_eta, VariationalPosterior};
use crate::{Error, Result};

/// Lower clamp applied to sampled proportions before renormalizing.
pub const THETA_FLOOR: f64 = 1e-6;

/// One sample of all documents' topic proportions (D x K).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaDraw {
    pub index: usize,
    pub theta: DMatrix<f64>,
}

impl ThetaDraw {
    pub fn topic(&self, k: usize) -> Vec<f64> {
        self.theta.column(k).iter().copied().collect()
    }
}

/// Pre-factored per-document Gaussians, reused across many draws.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    means: Vec<DVector<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl PosteriorSampler {
    pub fn new(posterior: &VariationalPosterior) -> Result<Self> {
        let mut means = Vec::with_capacity(posterior.num_documents());
        let mut factors = Vec::with_capacity(posterior.num_documents());
        for (d, doc) in posterior.docs.iter().enumerate() {
            means.push(doc.lambda.clone());
            // an exactly zero covariance is a point mass, not a jitter case
            if doc.sigma.iter().all(|v| *v == 0.0) {
                factors.push(DMatrix::zeros(doc.sigma.nrows(), doc.sigma.ncols()));
                continue;
            }
            let (chol, _) = cholesky_with_jitter(&doc.sigma)
                .map_err(|e| Error::Numerical(format!("document {d}: posterior covariance: {e}")))?;
            factors.push(chol.l());
        }
        Ok(PosteriorSampler { means, factors })
    }

    pub fn num_documents(&self) -> usize {
        self.means.len()
    }

    pub fn num_topics(&self) -> usize {
        self.means.first().map_or(0, |m| m.len() + 1)
    }

    pub fn draw(&self, index: usize, rng: &mut StreamRng) -> ThetaDraw {
        let k = self.num_topics();
        let mut theta = DMatrix::zeros(self.means.len(), k);
        for (d, (mean, l)) in self.means.iter().zip(&self.factors).enumerate() {
            let z = DVector::from_fn(k - 1, |_, _| StandardNormal.sample(rng));
            let eta = mean + l * z;
            let row = clamp_renormalize(softmax_eta(eta.as_slice()));
            for (j, t) in row.into_iter().enumerate() {
                theta[(d, j)] = t;
            }
        }
        ThetaDraw { index, theta }
    }

    /// Draw `index` from the counter-addressed substream `root / THETA / index`.
    pub fn draw_indexed(&self, root: &Substream, index: usize) -> ThetaDraw {
        let mut rng = root.at(tag::THETA, index as u64).rng();
        self.draw(index, &mut rng)
    }
}

/// Clamp every component into [1e-6, 1 - 1e-6] and renormalize to sum one.
pub fn clamp_renormalize(mut row: Vec<f64>) -> Vec<f64> {
    row.iter_mut().for_each(|t| *t = t.clamp(THETA_FLOOR, 1.0 - THETA_FLOOR));
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|t| *t /= s);
    row
}

pub fn draw_theta(posterior: &VariationalPosterior, rng: &mut StreamRng) -> Result<ThetaDraw> {
    Ok(PosteriorSampler::new(posterior)?.draw(0, rng))
}

/// Column means of a draw (global topic proportions).
pub fn global_proportions(draw: &ThetaDraw) -> Vec<f64> {
    let d = draw.theta.nrows() as f64;
    draw.theta.column_iter().map(|c| c.sum() / d).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DrawsHeader {
    #[serde(rename = "D")]
    documents: usize,
    #[serde(rename = "K")]
    topics: usize,
    draws: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DrawRecord {
    draw: usize,
    doc_id: String,
    theta: Vec<f64>,
}

/// Write draws as one JSON record per (draw, document) after a header record.
pub fn export_draws(path: &Path, doc_ids: &[String], draws: &[ThetaDraw]) -> Result<()> {
    let k = draws.first().map_or(0, |d| d.theta.ncols());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = DrawsHeader { documents: doc_ids.len(), topics: k, draws: draws.len() };
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    put(serde_json::to_string(&header).expect("header serializes"))?;
    for draw in draws {
        if draw.theta.nrows() != doc_ids.len() {
            return Err(Error::Data(format!("draw {} has {} rows for {} documents", draw.index, draw.theta.nrows(), doc_ids.len())));
        }
        for (d, id) in doc_ids.iter().enumerate() {
            let rec = DrawRecord { draw: draw.index, doc_id: id.clone(), theta: draw.theta.row(d).iter().copied().collect() };
            put(serde_json::to_string(&rec).expect("draw record serializes"))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a draws file, validating that every row lies in the open simplex
/// (components in (0, 1), row sums within 1e-6 of one).
pub fn import_draws(path: &Path) -> Result<(Vec<String>, Vec<ThetaDraw>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_owned(), line, message };
    let header: DrawsHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(1, "missing header record".into()));
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            break serde_json::from_str(&line).map_err(|e| parse_err(i + 1, format!("bad header: {e}")))?;
        }
    };
    let (d, k) = (header.documents, header.topics);
    if d == 0 || k < 2 {
        return Err(parse_err(1, format!("header declares D = {d}, K = {k}")));
    }
    let mut doc_ids: Vec<String> = Vec::with_capacity(d);
    let mut draws: Vec<ThetaDraw> = Vec::with_capacity(header.draws);
    let mut row = 0usize;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: DrawRecord = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let draw_pos = row / d;
        let doc_pos = row % d;
        let where_ = format!("draw {}, document '{}'", rec.draw, rec.doc_id);
        if rec.theta.len() != k {
            return Err(parse_err(lineno, format!("{where_}: expected {k} proportions, found {}", rec.theta.len())));
        }
        if let Some(bad) = rec.theta.iter().find(|t| !(t.is_finite() && **t > 0.0 && **t < 1.0)) {
            return Err(parse_err(lineno, format!("{where_}: proportion {bad} outside (0, 1)")));
        }
        let sum: f64 = rec.theta.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(parse_err(lineno, format!("{where_}: proportions sum to {sum}")));
        }
        if draw_pos == 0 {
            doc_ids.push(rec.doc_id.clone());
        } else if doc_ids[doc_pos] != rec.doc_id {
            return Err(parse_err(lineno, format!("{where_}: expected document '{}'", doc_ids[doc_pos])));
        }
        if doc_pos == 0 {
            draws.push(ThetaDraw { index: rec.draw, theta: DMatrix::zeros(d, k) });
        } else if draws[draw_pos].index != rec.draw {
            return Err(parse_err(lineno, format!("{where_}: draw index changed mid-block")));
        }
        for (j, t) in rec.theta.into_iter().enumerate() {
            draws[draw_pos].theta[(doc_pos, j)] = t;
        }
        row += 1;
    }
    if row != d * header.draws {
        return Err(Error::Data(format!(
            "{}: header promises {} draws of {d} documents, found {row} records",
            path.display(),
            header.draws
        )));
    }
    Ok((doc_ids, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topic_model::DocPosterior;
    use rand::SeedableRng;

    fn posterior(lambda: &[f64], sigma: DMatrix<f64>, docs: usize) -> VariationalPosterior {
        VariationalPosterior {
            docs: (0..docs)
                .map(|_| DocPosterior {
                    lambda: DVector::from_column_slice(lambda),
                    sigma: sigma.clone(),
                    objective: 0.0,
                    converged: true,
                    iterations: 0,
                    jitter: 0.0,
                    trace: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn tiny_covariance_reproduces_softmax_of_mode() {
        let post = posterior(&[0.7, -1.2], DMatrix::identity(2, 2) * 1e-12, 3);
        let mut rng = StreamRng::seed_from_u64(1);
        let draw = draw_theta(&post, &mut rng).unwrap();
        let expect = softmax_eta(&[0.7, -1.2]);
        for d in 0..3 {
            for j in 0..3 {
                assert!((draw.theta[(d, j)] - expect[j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn global_proportions_are_column_means() {
        let draw = ThetaDraw { index: 0, theta: DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.6, 0.4]) };
        let g = global_proportions(&draw);
        assert!((g[0] - 0.4).abs() < 1e-15 && (g[1] - 0.6).abs() < 1e-15);
        let same = ThetaDraw { index: 0, theta: DMatrix::from_row_slice(2, 3, &[0.1, 0.3, 0.6, 0.1, 0.3, 0.6]) };
        assert_eq!(global_proportions(&same), vec![0.1, 0.3, 0.6]);
    }

    #[test]
    fn clamping_keeps_rows_inside() {
        let row = clamp_renormalize(softmax_eta(&[900.0, -900.0]));
        assert!(row.iter().all(|&t| t > 0.0 && t < 1.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        (dir, p)
    }

    #[test]
    fn import_rejects_simplex_violations() {
        let (_d, p) = write_lines(&[
            r#"{"D":2,"K":2,"draws":1}"#,
            r#"{"draw":0,"doc_id":"a","theta":[0.5,0.5]}"#,
            r#"{"draw":0,"doc_id":"b","theta":[0.5,0.3]}"#,
        ]);
        let err = import_draws(&p).unwrap_err().to_string();
        assert!(err.contains("document 'b'") && err.contains("sum to 0.8"), "{err}");
        let (_d, p) = write_lines(&[
            r#"{"D":1,"K":2,"draws":1}"#,
            r#"{"draw":0,"doc_id":"a","theta":[-0.1,1.1]}"#,
        ]);
        assert!(import_draws(&p).unwrap_err().to_string().contains("outside (0, 1)"));
        let (_d, p) = write_lines(&[r#"{"D":1,"K":2,"draws":2}"#, r#"{"draw":0,"doc_id":"a","theta":[0.5,0.5]}"#]);
        assert!(import_draws(&p).is_err());
    }
}
