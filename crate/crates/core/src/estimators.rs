//! Likelihood estimates built from simulated summary statistics.
//!
//! Everything is evaluated on the log scale: log-gamma for the normalizing
//! constants, Cholesky log-determinants, and log-sum-exp for kernel averages.
//! With summary dimensions in the hundreds the linear-scale constants
//! over- or underflow immediately.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cholesky_lower, SymMatrix};
use crate::models::SimulatorModel;
use crate::stats::{digamma, ln_gamma, LN_2PI};

/// `N` simulated summary vectors at one parameter value, stored as the
/// columns of a `d x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryBatch {
    data: DMatrix<f64>,
}

impl SummaryBatch {
    pub fn empty(dim: usize) -> Self {
        SummaryBatch {
            data: DMatrix::zeros(dim, 0),
        }
    }

    pub fn from_matrix(data: DMatrix<f64>) -> Self {
        SummaryBatch { data }
    }

    pub fn from_columns(dim: usize, columns: &[DVector<f64>]) -> Result<Self> {
        let mut data = DMatrix::zeros(dim, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.len(),
                });
            }
            data.set_column(j, c);
        }
        Ok(SummaryBatch { data })
    }

    /// Number of particles `N`.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    /// Summary dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Appends the particles of `other`.
    pub fn extend(&mut self, other: &SummaryBatch) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let n = self.n();
        let data = std::mem::replace(&mut self.data, DMatrix::zeros(0, 0));
        let mut grown = data.resize_horizontally(n + other.n(), 0.0);
        grown.columns_mut(n, other.n()).copy_from(&other.data);
        self.data = grown;
        Ok(())
    }

    /// Particles `start..start + len` as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> SummaryBatch {
        SummaryBatch {
            data: self.data.columns(start, len).into_owned(),
        }
    }
}

/// Sample mean (divisor `N`) and covariance (divisor `N - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub n: usize,
}

/// An estimated log-likelihood together with the number of particles used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikEstimate {
    pub value: f64,
    pub particles: usize,
    /// Estimated variance of `value` as an estimator, when available.
    pub var_estimate: Option<f64>,
    /// Set when adaptive particle growth stopped at its hard cap.
    pub capped: bool,
}

impl LogLikEstimate {
    fn new(value: f64, particles: usize, var_estimate: Option<f64>) -> Self {
        LogLikEstimate {
            value,
            particles,
            var_estimate,
            capped: false,
        }
    }
}

pub fn empirical_moments(batch: &SummaryBatch) -> Result<EmpiricalMoments> {
    let n = batch.n();
    if n < 2 {
        return Err(Error::TooFewParticles {
            estimator: "empirical moments",
            min: 1,
            got: n,
        });
    }
    let d = batch.dim();
    let data = batch.as_matrix();
    let mut mean = DVector::zeros(d);
    for j in 0..n {
        mean += data.column(j);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for j in 0..n {
        let r = data.column(j) - &mean;
        cov.ger(1.0, &r, &r, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok(EmpiricalMoments {
        mean,
        cov: SymMatrix::symmetrized(cov),
        n,
    })
}

/// Cholesky factor of a sample covariance. A singular matrix gets a single
/// ridge of `1e-10 · tr(Σ̂)/d` before giving up.
fn covariance_factor(cov: &SymMatrix) -> Result<DMatrix<f64>> {
    if let Some(l) = cov.cholesky() {
        return Ok(l);
    }
    let d = cov.dim();
    let ridge = 1e-10 * cov.as_matrix().trace() / d as f64;
    let jittered = cov.as_matrix() + DMatrix::identity(d, d) * ridge;
    cholesky_lower(&jittered).ok_or(Error::Singular("summary covariance"))
}

fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `rᵀ (L Lᵀ)⁻¹ r`.
fn mahalanobis(l: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let z = l
        .solve_lower_triangular(r)
        .expect("Cholesky factor has a positive diagonal");
    z.dot(&z)
}

fn check_dim(s: &DVector<f64>, d: usize) -> Result<()> {
    if s.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: s.len(),
        });
    }
    Ok(())
}

/// `log φ(s; μ̂, Σ̂)`, the plug-in synthetic log-likelihood.
pub fn plugin_sl_logdensity(s: &DVector<f64>, m: &EmpiricalMoments) -> Result<f64> {
    check_dim(s, m.mean.len())?;
    let l = covariance_factor(&m.cov)?;
    let d = s.len() as f64;
    Ok(-0.5 * (d * LN_2PI + log_det_from_factor(&l) + mahalanobis(&l, &(s - &m.mean))))
}

/// `log c(k, ν)` for the unbiased normal-density estimator.
fn ln_c(k: usize, nu: f64) -> f64 {
    let kf = k as f64;
    let gammas: f64 = (1..=k).map(|i| ln_gamma(0.5 * (nu - i as f64 + 1.0))).sum();
    -0.5 * kf * nu * std::f64::consts::LN_2
        - 0.25 * kf * (kf - 1.0) * std::f64::consts::PI.ln()
        - gammas
}

/// Log of the unbiased estimate of the Gaussian summary density. Returns
/// `-∞` when `S_θ - (s-μ̂)(s-μ̂)ᵀ/(1-1/N)` is not positive definite.
/// Requires `N > d + 3`.
pub fn unbiased_sl_density_log(s: &DVector<f64>, batch: &SummaryBatch) -> Result<f64> {
    let n = batch.n();
    let d = batch.dim();
    if n <= d + 3 {
        return Err(Error::TooFewParticles {
            estimator: "unbiased synthetic likelihood",
            min: d + 3,
            got: n,
        });
    }
    check_dim(s, d)?;
    let m = empirical_moments(batch)?;
    let nf = n as f64;
    let df = d as f64;
    // S_θ = (N-1) Σ̂
    let l_sigma = covariance_factor(&m.cov)?;
    let log_det_s = log_det_from_factor(&l_sigma) + df * (nf - 1.0).ln();
    let shrink = 1.0 - 1.0 / nf;
    let r = s - &m.mean;
    // |S_θ - r rᵀ/a| = |S_θ| (1 - rᵀS_θ⁻¹r / a), positive definite iff the
    // bracket is positive.
    let quad = mahalanobis(&l_sigma, &r) / (nf - 1.0);
    let bracket = 1.0 - quad / shrink;
    if !(bracket > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let log_det_psi = log_det_s + bracket.ln();
    Ok(-0.5 * df * LN_2PI + ln_c(d, nf - 2.0)
        - ln_c(d, nf - 1.0)
        - 0.5 * df * shrink.ln()
        - 0.5 * (nf - df - 2.0) * log_det_s
        + 0.5 * (nf - df - 3.0) * log_det_psi)
}

/// Point value of the unbiased Gaussian log-density estimator.
fn unbiased_log_sl_value(s: &DVector<f64>, batch: &SummaryBatch) -> Result<f64> {
    let n = batch.n();
    let d = batch.dim();
    let m = empirical_moments(batch)?;
    let l = covariance_factor(&m.cov)?;
    let nf = n as f64;
    let df = d as f64;
    let digammas: f64 = (1..=d).map(|i| digamma(0.5 * (nf - i as f64))).sum();
    let log_det_term = log_det_from_factor(&l) + df * (0.5 * (nf - 1.0)).ln() - digammas;
    let quad = mahalanobis(&l, &(s - &m.mean));
    let quad_term = (nf - df - 2.0) / (nf - 1.0) * quad - df / nf;
    Ok(-0.5 * df * LN_2PI - 0.5 * log_det_term - 0.5 * quad_term)
}

/// Number of groups used to estimate the variance of the unbiased
/// log-likelihood estimator by batching.
pub const VARIANCE_GROUPS: usize = 10;

/// Unbiased estimate of `log φ(s; μ(θ), Σ(θ))` from `N > d + 2` Gaussian
/// summaries. The variance estimate splits the particles into (up to) ten
/// groups, each large enough for the estimator, and scales the between-group
/// variance by the group size over `N`.
pub fn unbiased_log_sl(s: &DVector<f64>, batch: &SummaryBatch) -> Result<LogLikEstimate> {
    let n = batch.n();
    let d = batch.dim();
    if n <= d + 2 {
        return Err(Error::TooFewParticles {
            estimator: "unbiased log synthetic likelihood",
            min: d + 2,
            got: n,
        });
    }
    check_dim(s, d)?;
    let value = unbiased_log_sl_value(s, batch)?;
    let groups = (2..=VARIANCE_GROUPS).rev().find(|g| n / g > d + 2);
    let var_estimate = groups.and_then(|g| {
        let size = n / g;
        let vals: Vec<f64> = (0..g)
            .map(|k| unbiased_log_sl_value(s, &batch.slice(k * size, size)))
            .collect::<Result<_>>()
            .ok()?;
        Some(crate::stats::variance(&vals) * size as f64 / n as f64)
    });
    Ok(LogLikEstimate::new(value, n, var_estimate))
}

/// Log Gaussian-kernel weight `log K_ε(s, s')`.
pub fn abc_log_kernel(s: &DVector<f64>, other: &DVector<f64>, epsilon: f64) -> f64 {
    let d = s.len() as f64;
    -0.5 * d * (2.0 * std::f64::consts::PI * epsilon).ln()
        - (s - other).norm_squared() / (2.0 * epsilon)
}

/// Streaming accumulator for the kernel average; rescales its running sums
/// whenever a larger log weight arrives.
#[derive(Debug, Clone)]
pub struct AbcAccumulator {
    s: DVector<f64>,
    epsilon: f64,
    reference: f64,
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl AbcAccumulator {
    pub fn new(s: DVector<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {epsilon}"
            )));
        }
        Ok(AbcAccumulator {
            s,
            epsilon,
            reference: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            n: 0,
        })
    }

    pub fn push(&mut self, summary: &DVector<f64>) {
        self.push_log_weight(abc_log_kernel(&self.s, summary, self.epsilon));
    }

    fn push_log_weight(&mut self, lw: f64) {
        self.n += 1;
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw > self.reference {
            if self.reference > f64::NEG_INFINITY {
                let f = (self.reference - lw).exp();
                self.sum *= f;
                self.sum_sq *= f * f;
            }
            self.reference = lw;
        }
        let w = (lw - self.reference).exp();
        self.sum += w;
        self.sum_sq += w * w;
    }

    /// `log((1/N) Σ K_ε)` with a delta-method variance
    /// `Var(w) / (N · mean(w)²)`.
    pub fn estimate(&self) -> LogLikEstimate {
        let n = self.n as f64;
        if self.sum == 0.0 {
            return LogLikEstimate::new(f64::NEG_INFINITY, self.n, Some(f64::INFINITY));
        }
        let value = self.reference + (self.sum / n).ln();
        let var = if self.n >= 2 {
            let sample_var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
            let mean = self.sum / n;
            Some(sample_var / (n * mean * mean))
        } else {
            None
        };
        LogLikEstimate::new(value, self.n, var)
    }
}

/// ABC likelihood estimate with the Gaussian kernel
/// `(2πε)^{-d/2} exp(-‖s - Sᵢ‖²/(2ε))`. Returns `-∞` (with infinite
/// variance) when every weight underflows.
pub fn abc_loglik(s: &DVector<f64>, batch: &SummaryBatch, epsilon: f64) -> Result<LogLikEstimate> {
    if batch.n() == 0 {
        return Err(Error::TooFewParticles {
            estimator: "ABC kernel",
            min: 0,
            got: 0,
        });
    }
    check_dim(s, batch.dim())?;
    let mut acc = AbcAccumulator::new(s.clone(), epsilon)?;
    // Push the largest weight first so the running sums never rescale.
    let lws: Vec<f64> = (0..batch.n())
        .map(|j| abc_log_kernel(s, &batch.column(j), epsilon))
        .collect();
    let max = lws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    acc.reference = max;
    for lw in lws {
        acc.push_log_weight(lw);
    }
    Ok(acc.estimate())
}

/// Which likelihood estimate to form from a batch of summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodEstimator {
    /// Unbiased estimate of the Gaussian log-density.
    UnbiasedLogSl,
    /// Log of the unbiased Gaussian density estimate.
    UnbiasedSlDensity,
    /// Plug-in Gaussian log-density.
    PluginSl,
    /// Gaussian-kernel ABC likelihood.
    Abc { epsilon: f64 },
}

impl LikelihoodEstimator {
    /// Smallest batch the estimator accepts for summary dimension `d`.
    pub fn min_particles(&self, d: usize) -> usize {
        match self {
            LikelihoodEstimator::UnbiasedLogSl => d + 3,
            LikelihoodEstimator::UnbiasedSlDensity => d + 4,
            LikelihoodEstimator::PluginSl => d + 1,
            LikelihoodEstimator::Abc { .. } => 1,
        }
    }

    pub fn evaluate(&self, s: &DVector<f64>, batch: &SummaryBatch) -> Result<LogLikEstimate> {
        match *self {
            LikelihoodEstimator::UnbiasedLogSl => unbiased_log_sl(s, batch),
            LikelihoodEstimator::UnbiasedSlDensity => {
                unbiased_sl_density_log(s, batch).map(|v| LogLikEstimate::new(v, batch.n(), None))
            }
            LikelihoodEstimator::PluginSl => {
                let m = empirical_moments(batch)?;
                plugin_sl_logdensity(s, &m).map(|v| LogLikEstimate::new(v, batch.n(), None))
            }
            LikelihoodEstimator::Abc { epsilon } => abc_loglik(s, batch, epsilon),
        }
    }
}

/// Grow the particle set in fixed increments until the estimated variance
/// of the log-likelihood estimate drops below a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParticles {
    pub n_min: usize,
    pub target_var: f64,
    #[serde(default = "default_increment")]
    pub increment: usize,
    /// Hard cap on the particle count; `None` means `100 · n_min`.
    #[serde(default)]
    pub cap: Option<usize>,
}

fn default_increment() -> usize {
    50
}

impl AdaptiveParticles {
    pub fn new(n_min: usize, target_var: f64) -> Self {
        AdaptiveParticles {
            n_min,
            target_var,
            increment: default_increment(),
            cap: None,
        }
    }

    pub fn effective_cap(&self) -> usize {
        self.cap.unwrap_or(100 * self.n_min).max(self.n_min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 {
            return Err(Error::InvalidArgument("n_min must be >= 1".into()));
        }
        if !(self.target_var > 0.0) {
            return Err(Error::InvalidArgument("target variance must be > 0".into()));
        }
        if self.increment == 0 {
            return Err(Error::InvalidArgument("increment must be >= 1".into()));
        }
        Ok(())
    }
}

fn needs_more(est: &LogLikEstimate, target: f64) -> bool {
    match est.var_estimate {
        Some(v) => !(v <= target),
        None => target.is_finite(),
    }
}

/// Simulates `n_min` particles at `theta`, then adds `increment` at a time
/// until the variance estimate is at most `target_var` or the cap is hit.
/// The final estimate uses every simulated particle.
pub fn adaptive_particles<M: SimulatorModel + ?Sized>(
    theta: &DVector<f64>,
    model: &M,
    estimator: &LikelihoodEstimator,
    policy: &AdaptiveParticles,
    rng: &mut dyn RngCore,
) -> Result<(LogLikEstimate, SummaryBatch)> {
    policy.validate()?;
    let s = model.observed_summary();
    let cap = policy.effective_cap();
    let mut batch = model.simulate_summaries(theta, policy.n_min, rng)?;
    if let LikelihoodEstimator::Abc { epsilon } = *estimator {
        let mut acc = AbcAccumulator::new(s.clone(), epsilon)?;
        for j in 0..batch.n() {
            acc.push(&batch.column(j));
        }
        let mut est = acc.estimate();
        while needs_more(&est, policy.target_var) && batch.n() < cap {
            let add = policy.increment.min(cap - batch.n());
            let more = model.simulate_summaries(theta, add, rng)?;
            for j in 0..more.n() {
                acc.push(&more.column(j));
            }
            batch.extend(&more)?;
            est = acc.estimate();
        }
        est.capped = needs_more(&est, policy.target_var);
        return Ok((est, batch));
    }
    let mut est = estimator.evaluate(s, &batch)?;
    while needs_more(&est, policy.target_var) && batch.n() < cap {
        let add = policy.increment.min(cap - batch.n());
        let more = model.simulate_summaries(theta, add, rng)?;
        batch.extend(&more)?;
        est = estimator.evaluate(s, &batch)?;
    }
    est.capped = needs_more(&est, policy.target_var);
    Ok((est, batch))
}

/// How many particles each likelihood estimate uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParticlePolicy {
    Fixed { n: usize },
    Adaptive(AdaptiveParticles),
}

impl ParticlePolicy {
    pub fn min_particles(&self) -> usize {
        match self {
            ParticlePolicy::Fixed { n } => *n,
            ParticlePolicy::Adaptive(a) => a.n_min,
        }
    }

    /// One likelihood estimate at `theta`.
    pub fn estimate<M: SimulatorModel + ?Sized>(
        &self,
        theta: &DVector<f64>,
        model: &M,
        estimator: &LikelihoodEstimator,
        rng: &mut dyn RngCore,
    ) -> Result<LogLikEstimate> {
        match self {
            ParticlePolicy::Fixed { n } => {
                let batch = model.simulate_summaries(theta, *n, rng)?;
                estimator.evaluate(model.observed_summary(), &batch)
            }
            ParticlePolicy::Adaptive(a) => {
                adaptive_particles(theta, model, estimator, a, rng).map(|(e, _)| e)
            }
        }
    }
}
