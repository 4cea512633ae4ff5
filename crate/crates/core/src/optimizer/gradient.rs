use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{LikelihoodEstimator, ParticlePolicy};
use crate::models::SimulatorModel;
use crate::variational::GaussianFamily;

/// Added to `Var(∇log q)` in the control-variate ratio.
pub const CV_DENOMINATOR_GUARD: f64 = 1e-12;

/// Failed or `-∞` likelihood draws get the smallest finite `ĥ` minus this.
pub const FAILURE_PENALTY: f64 = 10.0;

/// How `log p(y | θ)` is obtained for each variational draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    /// A simulation-based estimate.
    Estimated {
        estimator: LikelihoodEstimator,
        particles: ParticlePolicy,
    },
    /// The model's closed-form log-likelihood.
    Exact,
}

impl Likelihood {
    pub fn vbsl(n: usize) -> Self {
        Likelihood::Estimated {
            estimator: LikelihoodEstimator::UnbiasedLogSl,
            particles: ParticlePolicy::Fixed { n },
        }
    }
}

/// One draw's contribution before reduction.
#[derive(Debug, Clone, Copy)]
struct DrawResult {
    loglik: Option<f64>,
    particles: usize,
    capped: bool,
}

/// Output of one batch of `S` variational draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// `Ĥ = (1/S) Σ (ĥ - log q - c) ∇log q`
    pub hhat: DVector<f64>,
    /// `(1/S) Σ (ĥ - log q)`
    pub lb: f64,
    /// Per-coordinate control variates for the next iteration.
    pub cvec: DVector<f64>,
    pub sims_used: usize,
    /// Draws whose likelihood failed or was `-∞`.
    pub penalized: usize,
    /// Draws whose adaptive particle count hit its cap.
    pub capped: usize,
}

impl GradientEstimate {
    pub fn is_finite(&self) -> bool {
        self.lb.is_finite()
            && self.hhat.iter().all(|v| v.is_finite())
            && self.cvec.iter().all(|v| v.is_finite())
    }
}

/// Numerical failures that cost one draw or one step rather than the run.
pub(crate) fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Singular(_)
            | Error::OutOfRange(_)
            | Error::NotPositiveDefinite
            | Error::TooFewParticles { .. }
    )
}

fn evaluate_draw<M: SimulatorModel + ?Sized>(
    theta: &DVector<f64>,
    model: &M,
    likelihood: &Likelihood,
    rng: &mut ChaCha8Rng,
) -> Result<DrawResult> {
    match likelihood {
        Likelihood::Exact => {
            let v = model.exact_log_likelihood(theta).ok_or_else(|| {
                Error::InvalidArgument(format!("model `{}` has no exact likelihood", model.name()))
            })?;
            Ok(DrawResult {
                loglik: Some(v),
                particles: 0,
                capped: false,
            })
        }
        Likelihood::Estimated {
            estimator,
            particles,
        } => match particles.estimate(theta, model, estimator, rng) {
            Ok(e) => Ok(DrawResult {
                loglik: Some(e.value),
                particles: e.particles,
                capped: e.capped,
            }),
            Err(e) if recoverable(&e) => Ok(DrawResult {
                loglik: None,
                particles: particles.min_particles(),
                capped: false,
            }),
            Err(e) => Err(e),
        },
    }
}

/// Child generator for draw `s` of the batch seeded with `seed`.
pub(crate) fn child_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `S` parameters from `q`, estimates `ĥ = log p(θ) + log p̂(y|θ)` at
/// each, and forms the gradient, lower bound and new control variates.
///
/// The parameter draws come from stream 0 of `seed`; draw `s` simulates
/// with stream `s + 1`. Estimates may run in parallel but are reduced in
/// draw order, so results do not depend on the thread count.
pub fn estimate_gradient<F: GaussianFamily, M: SimulatorModel + ?Sized>(
    q: &F,
    model: &M,
    likelihood: &Likelihood,
    samples: usize,
    c_prev: &DVector<f64>,
    seed: u64,
) -> Result<GradientEstimate> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 variational draws, got {samples}"
        )));
    }
    if model.param_dim() != q.dim() {
        return Err(Error::Dimension {
            expected: model.param_dim(),
            got: q.dim(),
        });
    }
    let thetas = q.sample(samples, &mut child_rng(seed, 0));
    let draws: Vec<Result<DrawResult>> = thetas
        .par_iter()
        .enumerate()
        .map(|(s, theta)| {
            evaluate_draw(theta, model, likelihood, &mut child_rng(seed, s as u64 + 1))
        })
        .collect();
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;

    let mut h: Vec<Option<f64>> = draws
        .iter()
        .zip(&thetas)
        .map(|(d, theta)| {
            d.loglik
                .map(|l| l + model.log_prior(theta))
                .filter(|v| v.is_finite())
        })
        .collect();
    let penalized = h.iter().filter(|v| v.is_none()).count();
    // With no finite draw at all the batch is unusable; -∞ marks it so.
    let floor = h
        .iter()
        .flatten()
        .copied()
        .reduce(f64::min)
        .map_or(f64::NEG_INFINITY, |m| m - FAILURE_PENALTY);
    let h: Vec<f64> = h.iter_mut().map(|v| v.unwrap_or(floor)).collect();

    let sims_used = draws.iter().map(|d| d.particles).sum();
    let capped = draws.iter().filter(|d| d.capped).count();
    let f: Vec<f64> = h
        .iter()
        .zip(&thetas)
        .map(|(h, t)| h - q.log_density(t))
        .collect();
    let scores: Vec<DVector<f64>> = thetas.iter().map(|t| q.score(t)).collect();
    let (hhat, lb, cvec) = reduce(&f, &scores, c_prev);
    Ok(GradientEstimate {
        hhat,
        lb,
        cvec,
        sims_used,
        penalized,
        capped,
    })
}

/// Reduces per-draw `f = ĥ - log q` and scores `g` into `Ĥ`, the lower
/// bound and per-coordinate `c = Cov(f·g, g)/Var(g)`.
pub fn reduce(
    f: &[f64],
    scores: &[DVector<f64>],
    c_prev: &DVector<f64>,
) -> (DVector<f64>, f64, DVector<f64>) {
    let s = f.len() as f64;
    let k = scores[0].len();
    let mut hhat = DVector::zeros(k);
    for (fi, g) in f.iter().zip(scores) {
        for i in 0..k {
            hhat[i] += (fi - c_prev[i]) * g[i];
        }
    }
    hhat /= s;
    let lb = f.iter().sum::<f64>() / s;
    let cvec = DVector::from_fn(k, |i, _| {
        let mut mg = 0.0;
        let mut mfg = 0.0;
        for (fi, g) in f.iter().zip(scores) {
            mg += g[i];
            mfg += fi * g[i];
        }
        mg /= s;
        mfg /= s;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (fi, g) in f.iter().zip(scores) {
            cov += (fi * g[i] - mfg) * (g[i] - mg);
            var += (g[i] - mg) * (g[i] - mg);
        }
        cov / (s - 1.0) / (var / (s - 1.0) + CV_DENOMINATOR_GUARD)
    });
    (hhat, lb, cvec)
}
