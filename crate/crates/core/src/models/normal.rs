//! Normal location model `y_i ~ N(θ, 1)` with a `N(0, 1)` prior, using the
//! whole data vector as the summary statistic. Posteriors and optimal
//! lower bounds are available in closed form.

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{ComponentTransform, SimulatorModel};
use crate::error::{Error, Result};
use crate::stats::{normal_ln_pdf, LN_2PI};

#[derive(Debug, Clone)]
pub struct NormalToy {
    y: DVector<f64>,
}

impl NormalToy {
    pub fn new(y: DVector<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one observation".into(),
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observations must be finite".into()));
        }
        Ok(NormalToy { y })
    }

    /// `n` observations all equal to zero.
    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(DVector::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn mean(&self) -> f64 {
        self.y.mean()
    }

    /// Closed-form `log ∫ K_ε(y, s) p(s | θ) ds`: `log N(y; θ1, (1+ε)I)`.
    pub fn abc_log_likelihood(&self, theta: f64, epsilon: f64) -> f64 {
        self.y
            .iter()
            .map(|&v| normal_ln_pdf(v, theta, 1.0 + epsilon))
            .sum()
    }

    /// `log p(y)`, the exact log evidence.
    pub fn log_evidence(&self) -> f64 {
        lb_vbsl(self.y.as_slice()) * self.n() as f64
    }
}

impl SimulatorModel for NormalToy {
    fn name(&self) -> &str {
        "normal"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn summary_dim(&self) -> usize {
        self.y.len()
    }

    fn observed_summary(&self) -> &DVector<f64> {
        &self.y
    }

    fn simulate_summary(
        &self,
        theta: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        let t = theta[0];
        Ok(DVector::from_fn(self.y.len(), |_, _| {
            t + rng.sample::<f64, _>(StandardNormal)
        }))
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64 {
        normal_ln_pdf(theta[0], 0.0, 1.0)
    }

    fn transforms(&self) -> Vec<ComponentTransform> {
        vec![ComponentTransform::Identity]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn exact_log_likelihood(&self, theta: &DVector<f64>) -> Option<f64> {
        Some(
            self.y
                .iter()
                .map(|&v| normal_ln_pdf(v, theta[0], 1.0))
                .sum(),
        )
    }

    fn lower_bound_scale(&self) -> f64 {
        self.y.len() as f64
    }
}

/// Exact posterior `(mean, variance)` = `(n ȳ/(1+n), 1/(1+n))`.
pub fn exact_posterior(n: usize, ybar: f64) -> (f64, f64) {
    let n = n as f64;
    (n * ybar / (1.0 + n), 1.0 / (1.0 + n))
}

/// Posterior under the Gaussian-kernel ABC likelihood with bandwidth `ε`.
pub fn abc_posterior(n: usize, ybar: f64, epsilon: f64) -> (f64, f64) {
    let m = n as f64 / (1.0 + epsilon);
    (m * ybar / (1.0 + m), 1.0 / (1.0 + m))
}

/// The `ε` whose ABC posterior variance is `ratio` times the exact one.
pub fn epsilon_for_variance_ratio(n: usize, ratio: f64) -> f64 {
    let nf = n as f64;
    nf / ((1.0 + nf) / ratio - 1.0) - 1.0
}

/// Optimal lower bound divided by `n` under the exact (synthetic) likelihood.
pub fn lb_vbsl(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let sum: f64 = y.iter().sum();
    let sum_sq: f64 = y.iter().map(|v| v * v).sum();
    -0.5 * LN_2PI - sum_sq / (2.0 * n) - (n + 1.0).ln() / (2.0 * n)
        + sum * sum / (2.0 * n * (n + 1.0))
}

/// Optimal augmented-space lower bound divided by `n` for the ABC
/// likelihood with bandwidth `ε` and log-likelihood estimator variance `τ²`.
pub fn lb_vbil(y: &[f64], epsilon: f64, tau2: f64) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let sum_sq: f64 = y.iter().map(|v| v * v).sum();
    let m = n / (1.0 + epsilon);
    -0.5 * LN_2PI
        - 0.5 * (1.0 + epsilon).ln()
        - sum_sq / (2.0 * n * (1.0 + epsilon))
        - (m + 1.0).ln() / (2.0 * n)
        + m * m * ybar * ybar / (2.0 * n * (1.0 + m))
        - tau2 / (2.0 * n)
}
