//! Topic-metadata relationships for logistic-normal topic models.
//!
//! The crate fits a prevalence-covariate logistic-normal topic model by
//! variational EM, samples topic proportions from the resulting approximate
//! posterior, and pushes those samples through the method of composition with
//! one of three regression back-ends: OLS, frequentist Beta regression, or
//! Bayesian Beta regression with posterior predictive draws.
//!
//! Module map:
//! - [`corpus`], [`design`], [`synthetic`]: data loading, design matrices and
//!   ground-truth simulation.
//! - [`topic_model`]: the variational EM fit and checkpoint format.
//! - [`draws`]: sampling topic proportions from the variational posterior.
//! - [`regression`]: OLS, Beta MLE and Bayesian Beta back-ends.
//! - [`composition`]: the composition loop and its summaries.
//! - [`diagnostics`]: held-out likelihood, coherence, exclusivity, dispersion.

pub mod composition;
pub mod corpus;
pub mod design;
pub mod diagnostics;
pub mod draws;
mod error;
pub mod linalg;
pub mod optim;
pub mod regression;
pub mod rng;
pub mod special;
pub mod spectral;
pub mod synthetic;
pub mod topic_model;

pub use error::{Error, ErrorKind, Result};
