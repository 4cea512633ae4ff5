//! Multivariate normal variational family `q_λ(θ) = N(μ, Σ)`.
//!
//! Two parametrizations share the [`GaussianFamily`] interface:
//!
//! * [`NaturalGaussianParams`]: exponential-family natural parameters
//!   `λ = [Σ⁻¹μ; -½ D_pᵀ vec(Σ⁻¹)]`. An update that leaves the implied `Σ`
//!   indefinite is rejected.
//! * [`CholeskyGaussianParams`]: `λ = [μ; vech(C)]` with `Σ⁻¹ = C Cᵀ` and
//!   `C` lower triangular. Any invertible `C` is valid, so updates are
//!   always accepted after the diagonal is kept away from zero.
//!
//! Both expose the score `∇_λ log q_λ(θ)` and the exact Fisher information
//! so the optimizer can take natural-gradient steps.

mod cholesky;
mod natural;

pub use cholesky::{CholeskyGaussianParams, DIAGONAL_FLOOR};
pub use natural::{NaturalGaussianParams, SufficientStat};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::SymMatrix;

/// Which coordinates `λ` the optimizer moves in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    Natural,
    Cholesky,
}

impl std::fmt::Display for Parametrization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Parametrization::Natural => f.write_str("natural"),
            Parametrization::Cholesky => f.write_str("cholesky"),
        }
    }
}

/// Outcome of moving `λ` by a proposed increment.
#[derive(Debug, Clone)]
pub enum Proposal<F> {
    Accepted(F),
    /// The proposal does not describe a valid Gaussian; keep the old `λ`.
    Rejected,
}

/// Shared interface of the two Gaussian parametrizations.
pub trait GaussianFamily: Clone + Send + Sync + std::fmt::Debug {
    const PARAMETRIZATION: Parametrization;

    /// Builds the parametrization of `N(mu, sigma)`.
    fn from_moments(mu: &DVector<f64>, sigma: &SymMatrix) -> Result<Self>;

    /// Rebuilds from a flat `λ` vector.
    fn from_lambda(lambda: &DVector<f64>, dim: usize) -> Result<Self>;

    /// Parameter dimension `p`.
    fn dim(&self) -> usize;

    /// Flat `λ`, of length `p + p(p+1)/2`.
    fn lambda(&self) -> DVector<f64>;

    fn mean(&self) -> &DVector<f64>;

    fn covariance(&self) -> &SymMatrix;

    fn log_density(&self, theta: &DVector<f64>) -> f64;

    /// `∇_λ log q_λ(θ)`.
    fn score(&self, theta: &DVector<f64>) -> DVector<f64>;

    /// Lower factor `A` with `A Aᵀ = Σ`, used to map standard normals.
    fn sampling_factor(&self) -> &DMatrix<f64>;

    /// `I_F(λ)⁻¹ g`.
    fn natural_direction(&self, grad: &DVector<f64>) -> Result<DVector<f64>>;

    /// `λ + delta`, validated for this parametrization.
    fn shifted(&self, delta: &DVector<f64>) -> Proposal<Self>;

    fn lambda_len(&self) -> usize {
        let p = self.dim();
        p + p * (p + 1) / 2
    }

    /// Maps standard-normal vectors `z` to `μ + A z`.
    fn transform_standard(&self, z: &DVector<f64>) -> DVector<f64> {
        self.mean() + self.sampling_factor() * z
    }

    /// `count` i.i.d. draws; deterministic for a seeded `rng`.
    fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let p = self.dim();
        (0..count)
            .map(|_| {
                let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                self.transform_standard(&z)
            })
            .collect()
    }
}

/// `log N(θ; μ, Σ)` evaluated through a precision matrix and its log
/// determinant.
pub(crate) fn gaussian_log_density(
    theta: &DVector<f64>,
    mu: &DVector<f64>,
    precision: &DMatrix<f64>,
    log_det_precision: f64,
) -> f64 {
    let r = theta - mu;
    let quad = r.dot(&(precision * &r));
    -0.5 * (theta.len() as f64) * crate::stats::LN_2PI + 0.5 * log_det_precision - 0.5 * quad
}
