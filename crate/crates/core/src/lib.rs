//! Likelihood-free Bayesian inference by stochastic natural-gradient
//! variational Bayes driven by unbiased synthetic-likelihood estimates.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod harness;
pub mod matrix;
pub mod models;
pub mod optimizer;
pub mod pmmh;
pub mod stats;
pub mod variational;

pub use error::{Error, Result};
pub use estimators::{
    AdaptiveParticles, LikelihoodEstimator, LogLikEstimate, ParticlePolicy, SummaryBatch,
};
pub use harness::{compare_reports, run_experiment, RunConfig, RunReport};
pub use matrix::{LowerTriMatrix, SymMatrix};
pub use models::{AlphaStable, ComponentTransform, GandK, NormalToy, SimulatorModel};
pub use optimizer::{Likelihood, OptimizerConfig, OptimizerTrace, StepRule};
pub use pmmh::{pm_mh, Chain};
pub use variational::{
    CholeskyGaussianParams, GaussianFamily, NaturalGaussianParams, Parametrization,
};
