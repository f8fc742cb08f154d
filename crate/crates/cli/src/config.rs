//! Run configuration: one TOML document with a section per subcommand.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use topicmeta::composition::{Method, DEFAULT_GRID_POINTS, DEFAULT_LEVELS, DEFAULT_PREDICTIVE_DRAWS, DEFAULT_REPEATS};
use topicmeta::diagnostics::{DEFAULT_DISPERSION_TOL, DEFAULT_FREX_WEIGHT, DEFAULT_HELDOUT_FRACTION, DEFAULT_TOP_WORDS};
use topicmeta::regression::{McmcConfig, PriorScales};
use topicmeta::topic_model::{EStepConfig, FitConfig, InitMethod};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 picks the number of cores.
    pub threads: usize,
    pub out: PathBuf,
    pub generate: GenerateConfig,
    pub fit: FitSection,
    pub draws: DrawsSection,
    pub effect: EffectSection,
    pub searchk: SearchKSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            out: PathBuf::from("out"),
            generate: GenerateConfig::default(),
            fit: FitSection::default(),
            draws: DrawsSection::default(),
            effect: EffectSection::default(),
            searchk: SearchKSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub documents: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    /// Geometric decay of word weights inside a topic's block.
    pub decay: f64,
    pub mean_tokens: f64,
    /// Covariates besides the intercept.
    pub covariates: usize,
    /// Coefficient of `x1` on the first topic's logit when `gamma` is absent.
    pub effect: f64,
    /// Full `(covariates + 1) x (topics - 1)` coefficient matrix.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// `Sigma = sigma_scale * I`.
    pub sigma_scale: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            documents: 500,
            topics: 3,
            words_per_topic: 10,
            decay: 0.8,
            mean_tokens: 100.0,
            covariates: 1,
            effect: 3.0,
            gamma: None,
            sigma_scale: 3.0,
        }
    }
}

/// EM settings shared by `fit` and `searchk`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub init: InitMethod,
    pub init_concentration: f64,
    pub estep_max_iterations: usize,
    pub estep_grad_tol: f64,
}

impl Default for EmSection {
    fn default() -> Self {
        let d = FitConfig::default();
        EmSection {
            max_iterations: d.max_em_iterations,
            tolerance: d.tolerance,
            init: d.init,
            init_concentration: d.init_concentration,
            estep_max_iterations: d.estep.max_iterations,
            estep_grad_tol: d.estep.grad_tol,
        }
    }
}

impl EmSection {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            max_em_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed,
            init: self.init,
            init_concentration: self.init_concentration,
            estep: EStepConfig {
                max_iterations: self.estep_max_iterations,
                grad_tol: self.estep_grad_tol,
                record_trace: false,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub documents: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub topics: usize,
    /// Empty means every covariate column enters linearly; "1" is intercept only.
    pub formula: Option<String>,
    pub em: EmSection,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { documents: None, covariates: None, topics: 3, formula: None, em: EmSection::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrawsSection {
    pub checkpoint: Option<PathBuf>,
    pub count: usize,
}

impl Default for DrawsSection {
    fn default() -> Self {
        DrawsSection { checkpoint: None, count: DEFAULT_REPEATS }
    }
}

/// A held-fixed covariate value: a number or a category level.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FixedValue {
    Number(f64),
    Level(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectSection {
    pub checkpoint: Option<PathBuf>,
    pub documents: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Pre-computed topic-proportion draws; fresh draws when absent.
    pub draws: Option<PathBuf>,
    pub method: Method,
    pub topic: usize,
    /// Defaults to the first numeric covariate in the formula.
    pub focal: Option<String>,
    pub grid_points: usize,
    pub range: Option<[f64; 2]>,
    pub fixed: BTreeMap<String, FixedValue>,
    pub allow_extrapolation: bool,
    pub repeats: usize,
    pub predictive_draws: usize,
    pub levels: Vec<f64>,
    pub prior_xi: f64,
    pub prior_log_phi: f64,
    pub allow_unconverged: bool,
    pub mcmc: McmcConfig,
}

impl Default for EffectSection {
    fn default() -> Self {
        let prior = PriorScales::default();
        EffectSection {
            checkpoint: None,
            documents: None,
            covariates: None,
            draws: None,
            method: Method::BetaBayes,
            topic: 0,
            focal: None,
            grid_points: DEFAULT_GRID_POINTS,
            range: None,
            fixed: BTreeMap::new(),
            allow_extrapolation: false,
            repeats: DEFAULT_REPEATS,
            predictive_draws: DEFAULT_PREDICTIVE_DRAWS,
            levels: DEFAULT_LEVELS.to_vec(),
            prior_xi: prior.xi,
            prior_log_phi: prior.log_phi,
            allow_unconverged: false,
            mcmc: McmcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchKSection {
    pub documents: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub formula: Option<String>,
    pub ks: Vec<usize>,
    pub heldout_fraction: f64,
    pub top_words: usize,
    pub frex_weight: f64,
    pub dispersion_tol: f64,
    pub em: EmSection,
}

impl Default for SearchKSection {
    fn default() -> Self {
        SearchKSection {
            documents: None,
            covariates: None,
            formula: None,
            ks: (1..=8).map(|i| 5 * i).collect(),
            heldout_fraction: DEFAULT_HELDOUT_FRACTION,
            top_words: DEFAULT_TOP_WORDS,
            frex_weight: DEFAULT_FREX_WEIGHT,
            dispersion_tol: DEFAULT_DISPERSION_TOL,
            em: EmSection::default(),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn path_or(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }

    /// Checks that do not need any input data.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.generate;
        if g.documents == 0 || g.words_per_topic == 0 {
            return Err(usage("generate: documents and words_per_topic must be positive"));
        }
        if g.topics < 2 {
            return Err(usage(format!("generate: number of topics must be at least 2, got {}", g.topics)));
        }
        if !(g.decay > 0.0 && g.decay <= 1.0) {
            return Err(usage("generate: decay must lie in (0, 1]"));
        }
        if !(g.mean_tokens > 0.0) || !(g.sigma_scale > 0.0) {
            return Err(usage("generate: mean_tokens and sigma_scale must be positive"));
        }
        if let Some(gamma) = &g.gamma {
            if gamma.len() != g.covariates + 1 || gamma.iter().any(|r| r.len() != g.topics - 1) {
                return Err(usage(format!(
                    "generate: gamma must have {} rows of {} values",
                    g.covariates + 1,
                    g.topics - 1
                )));
            }
        } else if g.covariates == 0 && g.effect != 0.0 {
            return Err(usage("generate: a covariate effect needs at least one covariate"));
        }

        if self.fit.topics < 2 {
            return Err(usage(format!("fit: number of topics must be at least 2, got {}", self.fit.topics)));
        }
        self.fit.em.fit_config(self.seed).validate()?;
        if self.draws.count == 0 {
            return Err(usage("draws: count must be at least 1"));
        }

        let e = &self.effect;
        if e.grid_points == 0 || e.repeats == 0 || e.predictive_draws == 0 {
            return Err(usage("effect: grid_points, repeats and predictive_draws must be positive"));
        }
        if e.levels.is_empty() || e.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(usage("effect: levels must be non-empty and lie in (0, 1)"));
        }
        if let Some([lo, hi]) = e.range {
            if !(lo <= hi) {
                return Err(usage(format!("effect: empty range [{lo}, {hi}]")));
            }
        }
        if !(e.prior_xi > 0.0) || !(e.prior_log_phi > 0.0) {
            return Err(usage("effect: prior scales must be positive"));
        }
        e.mcmc.validate()?;

        let s = &self.searchk;
        if s.ks.is_empty() {
            return Err(usage("searchk: ks must not be empty"));
        }
        if let Some(k) = s.ks.iter().find(|k| **k < 2) {
            return Err(usage(format!("searchk: number of topics must be at least 2, got {k}")));
        }
        if !(s.heldout_fraction > 0.0 && s.heldout_fraction < 1.0) {
            return Err(usage("searchk: heldout_fraction must lie in (0, 1)"));
        }
        if s.top_words < 2 || !(s.frex_weight >= 0.0 && s.frex_weight <= 1.0) || !(s.dispersion_tol >= 0.0) {
            return Err(usage("searchk: need top_words >= 2, frex_weight in [0, 1], dispersion_tol >= 0"));
        }
        s.em.fit_config(self.seed).validate()?;
        Ok(())
    }
}
