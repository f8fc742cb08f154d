use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use topicmeta::composition::{
    run_composition, summarize, write_summary_csv, CompositionConfig, GridSpec, PredictionGrid, ThetaSource,
};
use topicmeta::corpus::{load_corpus, load_corpus_with_vocabulary, ColumnData, Corpus, CovariateTable, CovariateValue, Vocabulary};
use topicmeta::design::{build_design_matrix, DesignMatrix, Formula, Term};
use topicmeta::diagnostics::{search_k, SearchKConfig};
use topicmeta::draws::{export_draws, import_draws, PosteriorSampler, ThetaDraw};
use topicmeta::regression::PriorScales;
use topicmeta::rng::Substream;
use topicmeta::synthetic::{block_topics, generate_synthetic, SyntheticSpec};
use topicmeta::topic_model::{fit, Checkpoint};

use crate::config::{FixedValue, RunConfig};
use crate::{plot, CliError};

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "fit_report.json";
pub const DRAWS_FILE: &str = "draws.jsonl";
pub const SUMMARY_FILE: &str = "effect_summary.csv";
pub const EFFECT_PLOT_FILE: &str = "effect_plot.svg";
pub const SEARCHK_FILE: &str = "searchk.csv";
pub const SEARCHK_PLOT_FILE: &str = "searchk.svg";

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// The configured formula, or every covariate column entered linearly.
fn resolve_formula(spec: &Option<String>, table: &CovariateTable) -> Result<Formula, CliError> {
    match spec.as_deref().map(str::trim) {
        None | Some("") => Ok(Formula { terms: table.columns().iter().map(|c| Term::Column(c.name.clone())).collect() }),
        Some(text) => Ok(text.parse()?),
    }
}

fn load_design(corpus: &Corpus, formula: &Option<String>) -> Result<DesignMatrix, CliError> {
    let formula = resolve_formula(formula, &corpus.covariates)?;
    Ok(build_design_matrix(&corpus.covariates, &formula)?)
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.generate;
    let p = g.covariates + 1;
    let km1 = g.topics - 1;
    let gamma = match &g.gamma {
        Some(rows) => DMatrix::from_fn(p, km1, |i, j| rows[i][j]),
        None => {
            let mut m = DMatrix::zeros(p, km1);
            if p > 1 {
                m[(1, 0)] = g.effect;
            }
            m
        }
    };
    let spec = SyntheticSpec {
        documents: g.documents,
        gamma,
        sigma: DMatrix::identity(km1, km1) * g.sigma_scale,
        beta: block_topics(g.topics, g.words_per_topic, g.decay),
        mean_tokens: g.mean_tokens,
        seed: cfg.seed,
    };
    let (corpus, truth) = generate_synthetic(&spec)?;
    prepare_out(&cfg.out)?;
    topicmeta::corpus::write_corpus(&corpus, &cfg.out.join(DOCUMENTS_FILE), &cfg.out.join(COVARIATES_FILE))?;
    write_file(&cfg.out.join(TRUTH_FILE), &to_json(&truth))?;
    println!(
        "generated D = {}, V = {}, K = {} into {}",
        corpus.num_documents(),
        corpus.vocab_size(),
        g.topics,
        cfg.out.display()
    );
    Ok(())
}

pub fn fit_model(cfg: &RunConfig) -> Result<(), CliError> {
    let f = &cfg.fit;
    let corpus = load_corpus(&cfg.path_or(&f.documents, DOCUMENTS_FILE), &cfg.path_or(&f.covariates, COVARIATES_FILE))?;
    let design = load_design(&corpus, &f.formula)?;
    let start = Instant::now();
    let out = fit(&corpus, &design.matrix, f.topics, &f.em.fit_config(cfg.seed))?;
    prepare_out(&cfg.out)?;
    let ck = Checkpoint::new(&design.formula.to_string(), &corpus, &out.params, &out.posterior);
    ck.save(&cfg.out.join(CHECKPOINT_FILE))?;
    write_file(&cfg.out.join(REPORT_FILE), &to_json(&out.report))?;
    let r = &out.report;
    println!(
        "fit K = {} on D = {}, V = {}, P = {}: {} EM iterations, objective {:.6}, {} in {:.2?}",
        f.topics,
        corpus.num_documents(),
        corpus.vocab_size(),
        design.ncols(),
        r.iterations,
        r.objective_trace.last().copied().unwrap_or(f64::NAN),
        if r.converged { "converged" } else { "not converged" },
        start.elapsed()
    );
    if !r.converged {
        return Err(CliError::NotConverged(format!(
            "EM stopped after {} iterations without reaching tolerance {}",
            r.iterations, f.em.tolerance
        )));
    }
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    cfg.path_or(given, CHECKPOINT_FILE)
}

pub fn draws(cfg: &RunConfig) -> Result<(), CliError> {
    let ck = Checkpoint::load(&checkpoint_path(cfg, &cfg.draws.checkpoint))?;
    let sampler = PosteriorSampler::new(&ck.posterior()?)?;
    let root = Substream::new(cfg.seed);
    let draws: Vec<ThetaDraw> = (0..cfg.draws.count).into_par_iter().map(|i| sampler.draw_indexed(&root, i)).collect();
    prepare_out(&cfg.out)?;
    export_draws(&cfg.out.join(DRAWS_FILE), &ck.doc_ids, &draws)?;
    println!("wrote {} draws for {} documents", draws.len(), ck.doc_ids.len());
    Ok(())
}

/// First numeric source column named in the formula.
fn default_focal(formula: &Formula, table: &CovariateTable) -> Result<String, CliError> {
    formula
        .terms
        .iter()
        .map(Term::column)
        .find(|c| matches!(table.column(c).map(|col| &col.data), Some(ColumnData::Numeric(_))))
        .map(str::to_owned)
        .ok_or_else(|| CliError::Usage("effect: the formula has no numeric covariate to vary".into()))
}

pub fn effect(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.effect;
    let ck = Checkpoint::load(&checkpoint_path(cfg, &e.checkpoint))?;
    let corpus = load_corpus_with_vocabulary(
        &cfg.path_or(&e.documents, DOCUMENTS_FILE),
        &cfg.path_or(&e.covariates, COVARIATES_FILE),
        Vocabulary::new(ck.vocabulary.clone())?,
    )?;
    if corpus.doc_ids() != ck.doc_ids {
        return Err(topicmeta::Error::Data("documents do not match the ones the checkpoint was fitted on".into()).into());
    }
    let design = load_design(&corpus, &Some(ck.formula.clone()))?;
    if design.ncols() != ck.num_covariates {
        return Err(topicmeta::Error::Data(format!(
            "formula '{}' gives {} design columns, checkpoint has {}",
            ck.formula,
            design.ncols(),
            ck.num_covariates
        ))
        .into());
    }
    let focal = match &e.focal {
        Some(f) => f.clone(),
        None => default_focal(&design.formula, &corpus.covariates)?,
    };
    let mut spec = GridSpec::new(focal.clone());
    spec.points = e.grid_points;
    spec.range = e.range.map(|[lo, hi]| (lo, hi));
    spec.allow_extrapolation = e.allow_extrapolation;
    spec.fixed = e
        .fixed
        .iter()
        .map(|(name, v)| {
            let value = match v {
                FixedValue::Number(x) => CovariateValue::Numeric(*x),
                FixedValue::Level(l) => CovariateValue::Level(l.clone()),
            };
            (name.clone(), value)
        })
        .collect();
    let grid = PredictionGrid::new(&design, &corpus.covariates, &spec)?;

    let imported;
    let sampler;
    let source = match &e.draws {
        Some(path) => {
            let (ids, draws) = import_draws(path)?;
            if ids != ck.doc_ids {
                return Err(topicmeta::Error::Data(format!("draws in {} cover different documents", path.display())).into());
            }
            imported = draws;
            ThetaSource::Draws(&imported)
        }
        None => {
            sampler = PosteriorSampler::new(&ck.posterior()?)?;
            ThetaSource::Variational(&sampler)
        }
    };
    let ccfg = CompositionConfig {
        topic: e.topic,
        repeats: e.repeats,
        predictive_draws: e.predictive_draws,
        prior: PriorScales { xi: e.prior_xi, log_phi: e.prior_log_phi },
        mcmc: e.mcmc.clone(),
        allow_unconverged: e.allow_unconverged,
    };
    let result = run_composition(e.method, source, &design.matrix, &grid, &ccfg, cfg.seed)?;
    let summary = summarize(&result, &e.levels)?;
    prepare_out(&cfg.out)?;
    write_summary_csv(&summary, &cfg.out.join(SUMMARY_FILE))?;
    write_file(&cfg.out.join(EFFECT_PLOT_FILE), &plot::effect_svg(&summary, &focal))?;
    println!(
        "{} composition for topic {} over '{}': {} repeats ({} failed, {} unconverged), {} curves",
        result.method,
        result.topic,
        focal,
        result.repeats,
        result.failed,
        result.unconverged,
        result.samples.len()
    );
    Ok(())
}

pub fn searchk(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.searchk;
    let corpus = load_corpus(&cfg.path_or(&s.documents, DOCUMENTS_FILE), &cfg.path_or(&s.covariates, COVARIATES_FILE))?;
    let design = load_design(&corpus, &s.formula)?;
    let scfg = SearchKConfig {
        fit: s.em.fit_config(cfg.seed),
        heldout_fraction: s.heldout_fraction,
        top_words: s.top_words,
        frex_weight: s.frex_weight,
        dispersion_tol: s.dispersion_tol,
    };
    let report = search_k(&corpus, &design.matrix, &s.ks, &scfg)?;
    prepare_out(&cfg.out)?;
    report.save_csv(&cfg.out.join(SEARCHK_FILE))?;
    write_file(&cfg.out.join(SEARCHK_PLOT_FILE), &plot::searchk_svg(&report))?;
    println!("{:>4} {:>12} {:>12} {:>12} {:>12}", "K", "heldout", "coherence", "exclusivity", "dispersion");
    for r in &report.rows {
        println!(
            "{:>4} {:>12.5} {:>12.4} {:>12.4} {:>12.4}",
            r.k, r.heldout, r.coherence_mean, r.exclusivity_mean, r.dispersion
        );
        if let Some(err) = &r.error {
            eprintln!("warning: K = {} failed: {err}", r.k);
        }
    }
    if report.rows.iter().all(|r| r.error.is_some()) {
        return Err(CliError::NotConverged("every K in the search failed".into()));
    }
    Ok(())
}
