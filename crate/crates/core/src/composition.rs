//! The method of composition: repeatedly draw topic proportions, regress one
//! topic on the covariates, and predict over a covariate grid. Pooling the
//! predictions over repeats integrates over topic-proportion uncertainty.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ColumnData, CovariateTable, CovariateValue};
use crate::design::{quantile_sorted, DesignMatrix};
use crate::draws::{PosteriorSampler, ThetaDraw};
use crate::regression::{
    bayes_beta_sample, beta_mle, draw_coefficients, ols_fit, posterior_predictive_curve, Family, FrequentistFit,
    McmcConfig, PriorScales,
};
use crate::rng::{tag, Substream};
use crate::{Error, Result};

pub const DEFAULT_REPEATS: usize = 25;
pub const DEFAULT_GRID_POINTS: usize = 100;
pub const DEFAULT_PREDICTIVE_DRAWS: usize = 50;
pub const DEFAULT_LEVELS: [f64; 3] = [0.95, 0.90, 0.85];
/// Largest tolerated share of failed repeats.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    BetaFreq,
    BetaBayes,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::BetaFreq => "beta_freq",
            Method::BetaBayes => "beta_bayes",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(Method::Ols),
            "beta_freq" => Ok(Method::BetaFreq),
            "beta_bayes" => Ok(Method::BetaBayes),
            other => Err(Error::Config(format!("unknown method '{other}' (expected ols, beta_freq or beta_bayes)"))),
        }
    }
}

/// Where the topic-proportion samples of each repeat come from.
#[derive(Debug, Clone, Copy)]
pub enum ThetaSource<'a> {
    /// Fresh draws from the fitted variational posterior; repeat `r` uses
    /// the substream `seed / THETA / r`.
    Variational(&'a PosteriorSampler),
    /// Pre-computed draws; repeat `r` uses `draws[r % len]`.
    Draws(&'a [ThetaDraw]),
}

impl ThetaSource<'_> {
    fn topic_column(&self, root: &Substream, repeat: usize, topic: usize) -> Vec<f64> {
        match self {
            ThetaSource::Variational(sampler) => sampler.draw_indexed(root, repeat).topic(topic),
            ThetaSource::Draws(draws) => draws[repeat % draws.len()].topic(topic),
        }
    }

    fn check(&self, documents: usize, topic: usize) -> Result<()> {
        let (d, k) = match self {
            ThetaSource::Variational(s) => (s.num_documents(), s.num_topics()),
            ThetaSource::Draws(draws) => {
                let first = draws.first().ok_or_else(|| Error::Data("no topic-proportion draws supplied".into()))?;
                (first.theta.nrows(), first.theta.ncols())
            }
        };
        if d != documents {
            return Err(Error::Data(format!("topic proportions cover {d} documents, design has {documents} rows")));
        }
        if topic >= k {
            return Err(Error::Config(format!("topic {topic} out of range for a {k}-topic model")));
        }
        Ok(())
    }
}

/// Covariate points at which predictions are made: the focal covariate
/// varies over a grid, every other covariate is held fixed.
#[derive(Debug, Clone)]
pub struct PredictionGrid {
    pub focal: String,
    pub values: Vec<f64>,
    pub fixed: Vec<(String, CovariateValue)>,
    /// One design row per grid point, built with the training transforms.
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub focal: String,
    pub points: usize,
    /// Defaults to the observed range of the focal covariate.
    pub range: Option<(f64, f64)>,
    /// Overrides for held-fixed covariates.
    pub fixed: Vec<(String, CovariateValue)>,
    pub allow_extrapolation: bool,
}

impl GridSpec {
    pub fn new(focal: impl Into<String>) -> Self {
        GridSpec {
            focal: focal.into(),
            points: DEFAULT_GRID_POINTS,
            range: None,
            fixed: Vec::new(),
            allow_extrapolation: false,
        }
    }
}

impl PredictionGrid {
    pub fn new(design: &DesignMatrix, table: &CovariateTable, spec: &GridSpec) -> Result<Self> {
        if spec.points < 1 {
            return Err(Error::Config("prediction grid needs at least one point".into()));
        }
        let mut used: Vec<&str> = Vec::new();
        for t in &design.formula.terms {
            if !used.contains(&t.column()) {
                used.push(t.column());
            }
        }
        if !used.contains(&spec.focal.as_str()) {
            return Err(Error::Config(format!("focal covariate '{}' is not in the formula", spec.focal)));
        }
        let focal_col = table
            .column(&spec.focal)
            .ok_or_else(|| Error::Config(format!("unknown covariate '{}'", spec.focal)))?;
        let ColumnData::Numeric(observed) = &focal_col.data else {
            return Err(Error::Config(format!("focal covariate '{}' must be numeric", spec.focal)));
        };
        let lo_obs = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_obs = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = spec.range.unwrap_or((lo_obs, hi_obs));
        if !(lo <= hi) {
            return Err(Error::Config(format!("empty grid range [{lo}, {hi}]")));
        }
        if !spec.allow_extrapolation && (lo < lo_obs || hi > hi_obs) {
            return Err(Error::Config(format!(
                "grid [{lo}, {hi}] leaves the observed range [{lo_obs}, {hi_obs}] of '{}' (extrapolation not enabled)",
                spec.focal
            )));
        }
        let values: Vec<f64> = if spec.points == 1 {
            vec![lo]
        } else {
            (0..spec.points)
                .map(|i| if i + 1 == spec.points { hi } else { lo + (hi - lo) * i as f64 / (spec.points - 1) as f64 })
                .collect()
        };
        for (name, _) in &spec.fixed {
            if !used.contains(&name.as_str()) || *name == spec.focal {
                return Err(Error::Config(format!("cannot hold '{name}' fixed: not a non-focal formula covariate")));
            }
        }
        let mut fixed = Vec::new();
        for name in used.iter().filter(|c| **c != spec.focal) {
            let value = match spec.fixed.iter().find(|(n, _)| n == name) {
                Some((_, v)) => v.clone(),
                None => default_fixed_value(table, name)?,
            };
            fixed.push(((*name).to_owned(), value));
        }
        let mut matrix = DMatrix::zeros(values.len(), design.ncols());
        for (g, &v) in values.iter().enumerate() {
            let row = design.row_for(|col| {
                if col == spec.focal {
                    Some(CovariateValue::Numeric(v))
                } else {
                    fixed.iter().find(|(n, _)| n == col).map(|(_, v)| v.clone())
                }
            })?;
            for (j, x) in row.into_iter().enumerate() {
                matrix[(g, j)] = x;
            }
        }
        Ok(PredictionGrid { focal: spec.focal.clone(), values, fixed, matrix })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Numeric columns at their sample mean, categorical ones at their most
/// frequent level (ties go to the alphabetically first level).
fn default_fixed_value(table: &CovariateTable, name: &str) -> Result<CovariateValue> {
    let col = table.column(name).ok_or_else(|| Error::Config(format!("unknown covariate '{name}'")))?;
    Ok(match &col.data {
        ColumnData::Numeric(v) => CovariateValue::Numeric(v.iter().sum::<f64>() / v.len() as f64),
        ColumnData::Categorical { levels, codes } => {
            let mut counts = vec![0usize; levels.len()];
            codes.iter().for_each(|&c| counts[c] += 1);
            let best = (0..levels.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
            CovariateValue::Level(levels[best].clone())
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositionConfig {
    pub topic: usize,
    /// Number of composition repeats `m`.
    pub repeats: usize,
    /// Posterior-predictive curves per Bayesian repeat.
    pub predictive_draws: usize,
    pub prior: PriorScales,
    pub mcmc: McmcConfig,
    /// Keep Bayesian repeats whose chains were flagged as non-converged.
    pub allow_unconverged: bool,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            topic: 0,
            repeats: DEFAULT_REPEATS,
            predictive_draws: DEFAULT_PREDICTIVE_DRAWS,
            prior: PriorScales::default(),
            mcmc: McmcConfig::default(),
            allow_unconverged: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompositionResult {
    pub method: Method,
    pub topic: usize,
    pub repeats: usize,
    pub failed: usize,
    /// Bayesian repeats whose chains did not pass the R-hat check.
    pub unconverged: usize,
    pub seed: u64,
    pub prior: Option<PriorScales>,
    pub grid_values: Vec<f64>,
    /// Pooled predictions, each one a curve over the grid, in repeat order.
    pub samples: Vec<Vec<f64>>,
}

enum RepeatOutcome {
    Curves(Vec<Vec<f64>>),
    Failed,
    Unconverged(Vec<Vec<f64>>),
}

fn check_inputs(source: &ThetaSource, x: &DMatrix<f64>, topic: usize, grid: &PredictionGrid, repeats: usize) -> Result<()> {
    if repeats < 1 {
        return Err(Error::Config("composition needs at least one repeat".into()));
    }
    if grid.matrix.ncols() != x.ncols() {
        return Err(Error::Config(format!(
            "grid has {} design columns, training design has {}",
            grid.matrix.ncols(),
            x.ncols()
        )));
    }
    source.check(x.nrows(), topic)
}

fn collect(
    outcomes: Vec<RepeatOutcome>,
    method: Method,
    topic: usize,
    seed: u64,
    prior: Option<PriorScales>,
    grid: &PredictionGrid,
    allow_unconverged: bool,
) -> Result<CompositionResult> {
    let repeats = outcomes.len();
    let mut failed = 0;
    let mut unconverged = 0;
    let mut samples = Vec::new();
    for outcome in outcomes {
        match outcome {
            RepeatOutcome::Curves(c) => samples.extend(c),
            RepeatOutcome::Failed => failed += 1,
            RepeatOutcome::Unconverged(c) => {
                unconverged += 1;
                if allow_unconverged {
                    samples.extend(c);
                } else {
                    failed += 1;
                }
            }
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * repeats as f64 || samples.is_empty() {
        return Err(Error::NonConvergence {
            context: format!("{method} composition: {failed} of {repeats} repeats failed"),
            last_iterate: Vec::new(),
        });
    }
    Ok(CompositionResult {
        method,
        topic,
        repeats,
        failed,
        unconverged,
        seed,
        prior,
        grid_values: grid.values.clone(),
        samples,
    })
}

fn predict_rows(fit: &FrequentistFit, xi: &nalgebra::DVector<f64>, grid: &DMatrix<f64>) -> Vec<f64> {
    grid.row_iter()
        .map(|r| {
            let row: Vec<f64> = r.iter().copied().collect();
            fit.predict(xi, &row)
        })
        .collect()
}

/// Composition with a frequentist regression: per repeat, draw `theta`,
/// fit, draw coefficients from the estimator's asymptotic normal law and
/// evaluate `g(x^T xi*)` on the grid.
pub fn run_frequentist(
    source: ThetaSource,
    x: &DMatrix<f64>,
    topic: usize,
    family: Family,
    grid: &PredictionGrid,
    repeats: usize,
    seed: u64,
) -> Result<CompositionResult> {
    check_inputs(&source, x, topic, grid, repeats)?;
    let root = Substream::new(seed);
    let outcomes: Vec<RepeatOutcome> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let y = source.topic_column(&root, r, topic);
            let fit = match family {
                Family::Ols => ols_fit(&y, x).map(FrequentistFit::Ols),
                Family::Beta => beta_mle(&y, x).map(FrequentistFit::Beta),
            };
            let Ok(fit) = fit else { return RepeatOutcome::Failed };
            let mut rng = root.at(tag::REPEAT, r as u64).child(tag::COEFFICIENTS).rng();
            let draw = draw_coefficients(&fit, &mut rng);
            RepeatOutcome::Curves(vec![predict_rows(&fit, &draw.xi, &grid.matrix)])
        })
        .collect();
    let method = match family {
        Family::Ols => Method::Ols,
        Family::Beta => Method::BetaFreq,
    };
    collect(outcomes, method, topic, seed, None, grid, false)
}

/// Composition with Bayesian Beta regression: per repeat, draw `theta`,
/// sample the regression posterior with fresh chains, and keep
/// `predictive_draws` posterior-predictive curves. Curves are pooled.
pub fn run_bayesian(
    source: ThetaSource,
    x: &DMatrix<f64>,
    grid: &PredictionGrid,
    cfg: &CompositionConfig,
    seed: u64,
) -> Result<CompositionResult> {
    check_inputs(&source, x, cfg.topic, grid, cfg.repeats)?;
    cfg.mcmc.validate()?;
    if cfg.predictive_draws < 1 {
        return Err(Error::Config("need at least one predictive draw per repeat".into()));
    }
    let root = Substream::new(seed);
    let outcomes: Vec<RepeatOutcome> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let y = source.topic_column(&root, r, cfg.topic);
            let stream = root.at(tag::REPEAT, r as u64);
            let Ok(posterior) = bayes_beta_sample(&y, x, cfg.prior, &cfg.mcmc, &stream) else {
                return RepeatOutcome::Failed;
            };
            let mut rng = stream.child(tag::PREDICTIVE).rng();
            let curves = posterior_predictive_curve(&posterior, &grid.matrix, cfg.predictive_draws, &mut rng);
            if posterior.converged {
                RepeatOutcome::Curves(curves)
            } else {
                RepeatOutcome::Unconverged(curves)
            }
        })
        .collect();
    collect(outcomes, Method::BetaBayes, cfg.topic, seed, Some(cfg.prior), grid, cfg.allow_unconverged)
}

/// Dispatch on the method tag.
pub fn run_composition(
    method: Method,
    source: ThetaSource,
    x: &DMatrix<f64>,
    grid: &PredictionGrid,
    cfg: &CompositionConfig,
    seed: u64,
) -> Result<CompositionResult> {
    match method {
        Method::Ols => run_frequentist(source, x, cfg.topic, Family::Ols, grid, cfg.repeats, seed),
        Method::BetaFreq => run_frequentist(source, x, cfg.topic, Family::Beta, grid, cfg.repeats, seed),
        Method::BetaBayes => run_bayesian(source, x, grid, cfg, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub grid_value: f64,
    pub mean: f64,
    /// In the order of the requested levels.
    pub bands: Vec<Band>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub topic: usize,
    pub levels: Vec<f64>,
    pub rows: Vec<SummaryRow>,
}

/// Mean that is exact for constant input.
fn stable_mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

/// Per grid point: mean and central empirical quantile intervals (type 7).
pub fn summarize(result: &CompositionResult, levels: &[f64]) -> Result<Summary> {
    if result.samples.is_empty() {
        return Err(Error::Data("no successful composition repeats to summarize".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::Config(format!("band level {l} must lie in (0, 1)")));
    }
    let rows = result
        .grid_values
        .iter()
        .enumerate()
        .map(|(g, &grid_value)| {
            let column: Vec<f64> = result.samples.iter().map(|s| s[g]).collect();
            let mut sorted = column.clone();
            sorted.sort_by(f64::total_cmp);
            let bands = levels
                .iter()
                .map(|&level| Band {
                    level,
                    lower: quantile_sorted(&sorted, (1.0 - level) / 2.0),
                    upper: quantile_sorted(&sorted, (1.0 + level) / 2.0),
                })
                .collect();
            SummaryRow { grid_value, mean: stable_mean(&column), bands, n_samples: column.len() }
        })
        .collect();
    Ok(Summary { method: result.method, topic: result.topic, levels: levels.to_vec(), rows })
}

fn level_tag(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}").replace('.', "_")
    }
}

/// Columns `grid_value, mean, lower_L, upper_L..., n_samples, method, topic`.
pub fn write_summary<W: Write>(summary: &Summary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("writing summary: {e}"));
    let mut header = vec!["grid_value".to_string(), "mean".to_string()];
    for l in &summary.levels {
        header.push(format!("lower_{}", level_tag(*l)));
        header.push(format!("upper_{}", level_tag(*l)));
    }
    header.extend(["n_samples".to_string(), "method".to_string(), "topic".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for row in &summary.rows {
        let mut rec = vec![row.grid_value.to_string(), row.mean.to_string()];
        for b in &row.bands {
            rec.push(b.lower.to_string());
            rec.push(b.upper.to_string());
        }
        rec.push(row.n_samples.to_string());
        rec.push(summary.method.to_string());
        rec.push(summary.topic.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing summary: {e}")))?;
    Ok(())
}

pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_summary(summary, std::io::BufWriter::new(file))
}

/// Pick `n` distinct sample rows uniformly, for thinning large results
/// before export or plotting.
pub fn subsample_indices(total: usize, n: usize, stream: &Substream) -> Vec<usize> {
    let mut rng = stream.rng();
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..n.min(total) {
        let j = rng.random_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(n.min(total));
    idx.sort_unstable();
    idx
}
