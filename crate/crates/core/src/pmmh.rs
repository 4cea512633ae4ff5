//! Pseudo-marginal random-walk Metropolis–Hastings with the unbiased
//! Gaussian synthetic-likelihood estimate. The estimate at the current state
//! is carried along and only replaced when a proposal is accepted, which
//! keeps the chain exact for the synthetic-likelihood posterior whatever `N`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::unbiased_sl_density_log;
use crate::matrix::{cholesky_lower, SymMatrix};
use crate::models::SimulatorModel;
use crate::stats::batch_means_se;

/// Attempts at the starting point to find a finite likelihood estimate.
const START_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// Log of the retained unbiased density estimate.
    pub log_like: f64,
    pub log_prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub states: Vec<ChainState>,
    pub accepted: usize,
    pub particles: usize,
    /// Model simulations, including those spent finding a starting estimate.
    pub simulations: usize,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.states.len().max(1) as f64
    }

    /// Draws of component `k`, skipping the first `burn_in` states.
    pub fn component(&self, k: usize, burn_in: usize) -> Vec<f64> {
        self.states
            .iter()
            .skip(burn_in)
            .map(|s| s.theta[k])
            .collect()
    }

    /// Mean and batch-means standard error of component `k`.
    pub fn mean_with_se(&self, k: usize, burn_in: usize) -> (f64, f64) {
        let xs = self.component(k, burn_in);
        (crate::stats::mean(&xs), batch_means_se(&xs))
    }
}

/// Log acceptance ratio for moving from `current` to `proposed` under a
/// symmetric proposal.
pub fn log_acceptance_ratio(current: &ChainState, proposed: &ChainState) -> f64 {
    if proposed.log_like == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    proposed.log_like + proposed.log_prior - current.log_like - current.log_prior
}

fn proposal_factor(cov: &SymMatrix) -> Result<DMatrix<f64>> {
    if cov.as_matrix().iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(cov.dim(), cov.dim()));
    }
    cholesky_lower(cov.as_matrix()).ok_or(Error::NotPositiveDefinite)
}

fn estimate<M: SimulatorModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let batch = model.simulate_summaries(theta, n, rng)?;
    unbiased_sl_density_log(model.observed_summary(), &batch)
}

/// Runs `iterations` steps from `theta0` with Gaussian random-walk proposals
/// of covariance `proposal_cov` and `particles` simulations per estimate.
/// Estimator failures at a proposal count as rejections.
pub fn pm_mh<M: SimulatorModel + ?Sized>(
    model: &M,
    theta0: &DVector<f64>,
    iterations: usize,
    proposal_cov: &SymMatrix,
    particles: usize,
    rng: &mut dyn RngCore,
) -> Result<Chain> {
    let p = model.param_dim();
    let d = model.summary_dim();
    if particles <= d + 3 {
        return Err(Error::TooFewParticles {
            estimator: "pseudo-marginal chain",
            min: d + 3,
            got: particles,
        });
    }
    if theta0.len() != p || proposal_cov.dim() != p {
        return Err(Error::Dimension {
            expected: p,
            got: if theta0.len() != p {
                theta0.len()
            } else {
                proposal_cov.dim()
            },
        });
    }
    let factor = proposal_factor(proposal_cov)?;
    let mut current = None;
    let mut simulations = 0;
    for _ in 0..START_ATTEMPTS {
        simulations += particles;
        if let Ok(ll) = estimate(model, theta0, particles, rng) {
            if ll.is_finite() {
                current = Some(ChainState {
                    theta: theta0.iter().copied().collect(),
                    log_like: ll,
                    log_prior: model.log_prior(theta0),
                });
                break;
            }
        }
    }
    let mut current = current.ok_or_else(|| {
        Error::Aborted(format!(
            "no finite likelihood estimate at the start after {START_ATTEMPTS} attempts"
        ))
    })?;
    let mut states = Vec::with_capacity(iterations);
    let mut accepted = 0;
    for _ in 0..iterations {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = DVector::from_column_slice(&current.theta) + &factor * z;
        let log_like = estimate(model, &theta, particles, rng).unwrap_or(f64::NEG_INFINITY);
        simulations += particles;
        let proposed = ChainState {
            theta: theta.iter().copied().collect(),
            log_like,
            log_prior: model.log_prior(&theta),
        };
        let log_ratio = log_acceptance_ratio(&current, &proposed);
        let u: f64 = rng.random();
        if log_ratio.is_finite() && u.ln() < log_ratio || log_ratio == f64::INFINITY {
            current = proposed;
            accepted += 1;
        }
        states.push(current.clone());
    }
    Ok(Chain {
        states,
        accepted,
        particles,
        simulations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NormalToy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(ll: f64, lp: f64) -> ChainState {
        ChainState {
            theta: vec![0.0],
            log_like: ll,
            log_prior: lp,
        }
    }

    #[test]
    fn reciprocal_ratios() {
        let a = state(-3.2, -1.0);
        let b = state(-1.7, -2.5);
        assert_eq!(log_acceptance_ratio(&a, &b), -log_acceptance_ratio(&b, &a));
        assert_eq!(
            log_acceptance_ratio(&a, &state(f64::NEG_INFINITY, 0.0)),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn zero_proposal_never_moves() {
        let toy = NormalToy::zeros(4).unwrap();
        let theta0 = DVector::from_element(1, 0.3);
        let chain = pm_mh(
            &toy,
            &theta0,
            200,
            &SymMatrix::from_diagonal(&[0.0]),
            20,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(chain.states.iter().all(|s| s.theta == vec![0.3]));
    }

    #[test]
    fn retained_estimate_changes_only_on_acceptance() {
        let toy = NormalToy::zeros(4).unwrap();
        let chain = pm_mh(
            &toy,
            &DVector::zeros(1),
            500,
            &SymMatrix::from_diagonal(&[0.1]),
            20,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let moves = chain
            .states
            .windows(2)
            .filter(|w| w[0].theta != w[1].theta)
            .count();
        let relabels = chain
            .states
            .windows(2)
            .filter(|w| w[0].theta == w[1].theta && w[0].log_like != w[1].log_like)
            .count();
        assert_eq!(relabels, 0);
        assert!(moves > 50 && moves <= chain.accepted);
    }

    #[test]
    fn requires_enough_particles() {
        let toy = NormalToy::zeros(4).unwrap();
        let r = pm_mh(
            &toy,
            &DVector::zeros(1),
            10,
            &SymMatrix::identity(1),
            7,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(r, Err(Error::TooFewParticles { .. })));
    }
}
