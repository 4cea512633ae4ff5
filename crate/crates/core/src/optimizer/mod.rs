//! Stochastic natural-gradient ascent of the variational lower bound.
//!
//! Each iteration draws `S` parameters from `q_λ`, estimates the
//! log-likelihood at each by simulation, and forms the score-function
//! gradient with per-coordinate control variates carried over from the
//! previous batch. The step is preconditioned by the exact inverse Fisher
//! information of the Gaussian family, except under ADADELTA.

mod gradient;
mod step;

pub use gradient::{
    estimate_gradient, reduce, GradientEstimate, Likelihood, CV_DENOMINATOR_GUARD, FAILURE_PENALTY,
};
pub use step::{
    adadelta_step, adaptive_rate_update, fixed_rate, natural_step, AdadeltaState,
    AdaptiveRateState, StepRule,
};

use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SimulatorModel;
use crate::variational::{GaussianFamily, Parametrization};
use gradient::recoverable;

/// Consecutive iterations without a usable gradient tolerated before
/// aborting.
pub const MAX_NONFINITE: usize = 10;

/// Stop once the change in the windowed mean lower bound stays below
/// `tolerance` for `patience` consecutive windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    #[serde(default = "default_window")]
    pub window: usize,
    pub tolerance: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_window() -> usize {
    10
}

fn default_patience() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub likelihood: Likelihood,
    pub step_rule: StepRule,
    /// Variational draws per iteration, `S`.
    pub samples: usize,
    pub iterations: usize,
    #[serde(default)]
    pub stopping: Option<StoppingRule>,
}

impl OptimizerConfig {
    pub fn validate(&self, parametrization: Parametrization) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::config(
                "samples",
                format!("must be >= 2, got {}", self.samples),
            ));
        }
        self.step_rule.validate()?;
        if matches!(self.step_rule, StepRule::Adadelta { .. })
            && parametrization != Parametrization::Cholesky
        {
            return Err(Error::config(
                "step_rule",
                "adadelta requires the cholesky parametrization",
            ));
        }
        if let Some(s) = &self.stopping {
            if s.window == 0 || s.patience == 0 || !(s.tolerance > 0.0) {
                return Err(Error::config(
                    "stopping",
                    "window, patience and tolerance must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// One row of the optimizer trace. Iteration 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `λ` after this iteration's update.
    pub lambda: Vec<f64>,
    /// Lower-bound estimate at the `λ` the draws came from, divided by the
    /// model's lower-bound scale.
    pub lb: f64,
    /// Step size; 1 under ADADELTA, whose rates are per coordinate.
    pub rho: f64,
    pub sims: usize,
    pub cumulative_sims: usize,
    pub rejected: bool,
    pub penalized: usize,
    pub capped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub parametrization: Parametrization,
    pub dim: usize,
    pub records: Vec<IterationRecord>,
    /// Set when the stopping rule ended the run early.
    pub stopped_early: bool,
}

impl OptimizerTrace {
    pub fn total_sims(&self) -> usize {
        self.records.last().map_or(0, |r| r.cumulative_sims)
    }

    /// Lower bounds of iterations `1..`, excluding initialization.
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.records.iter().skip(1).map(|r| r.lb).collect()
    }
}

struct Stopper {
    rule: StoppingRule,
    current: Vec<f64>,
    last_mean: Option<f64>,
    quiet: usize,
}

impl Stopper {
    fn push(&mut self, lb: f64) -> bool {
        self.current.push(lb);
        if self.current.len() < self.rule.window {
            return false;
        }
        let mean = self.current.iter().sum::<f64>() / self.current.len() as f64;
        self.current.clear();
        if let Some(prev) = self.last_mean.replace(mean) {
            if (mean - prev).abs() < self.rule.tolerance {
                self.quiet += 1;
            } else {
                self.quiet = 0;
            }
        }
        self.quiet >= self.rule.patience
    }
}

/// Runs the optimizer from `q0`. Every random number is derived from `rng`:
/// one seed per gradient batch, in order.
pub fn run<F: GaussianFamily, M: SimulatorModel + ?Sized>(
    config: &OptimizerConfig,
    model: &M,
    q0: F,
    rng: &mut dyn RngCore,
) -> Result<(F, OptimizerTrace)> {
    config.validate(F::PARAMETRIZATION)?;
    let scale = model.lower_bound_scale();
    let lambda_len = q0.lambda_len();
    let mut q = q0;
    let mut records = Vec::with_capacity(config.iterations + 1);

    // Step 1: control variates (and adaptive-rate averages) at λ⁽⁰⁾.
    let init = estimate_gradient(
        &q,
        model,
        &config.likelihood,
        config.samples,
        &DVector::zeros(lambda_len),
        rng.next_u64(),
    )?;
    let mut cumulative = init.sims_used;
    let mut c = init.cvec.clone();
    let mut adaptive = None;
    let mut adadelta = None;
    match config.step_rule {
        StepRule::Adaptive { init_batches, .. } => {
            let mut directions = Vec::with_capacity(init_batches);
            for _ in 0..init_batches {
                let g = estimate_gradient(
                    &q,
                    model,
                    &config.likelihood,
                    config.samples,
                    &c,
                    rng.next_u64(),
                )?;
                cumulative += g.sims_used;
                directions.push(q.natural_direction(&g.hhat)?);
            }
            adaptive = Some(AdaptiveRateState::from_initial(&directions)?);
        }
        StepRule::Adadelta { decay, eps } => {
            adadelta = Some(AdadeltaState::new(lambda_len, decay, eps))
        }
        StepRule::Fixed { .. } => {}
    }
    records.push(IterationRecord {
        iteration: 0,
        lambda: q.lambda().iter().copied().collect(),
        lb: init.lb / scale,
        rho: 0.0,
        sims: cumulative,
        cumulative_sims: cumulative,
        rejected: false,
        penalized: init.penalized,
        capped: init.capped,
    });

    let mut nonfinite = 0;
    let mut stopper = config.stopping.map(|rule| Stopper {
        rule,
        current: Vec::new(),
        last_mean: None,
        quiet: 0,
    });
    let mut stopped_early = false;
    for t in 1..=config.iterations {
        let g = estimate_gradient(
            &q,
            model,
            &config.likelihood,
            config.samples,
            &c,
            rng.next_u64(),
        )?;
        cumulative += g.sims_used;
        let mut rho = 0.0;
        let mut rejected = true;
        let direction = match config.step_rule {
            _ if !g.is_finite() => None,
            StepRule::Adadelta { .. } => Some(g.hhat.clone()),
            _ => match q.natural_direction(&g.hhat) {
                Ok(d) if d.iter().all(|v| v.is_finite()) => Some(d),
                Ok(_) => None,
                Err(e) if recoverable(&e) => None,
                Err(e) => return Err(e),
            },
        };
        if let Some(dir) = direction {
            nonfinite = 0;
            match config.step_rule {
                StepRule::Fixed { a } => {
                    rho = fixed_rate(a, t);
                    (q, rejected) = natural_step(&q, &dir, rho);
                }
                StepRule::Adaptive { cap_dim, .. } => {
                    let state = adaptive.as_mut().expect("initialized above");
                    *state = adaptive_rate_update(state, &dir, cap_dim.unwrap_or(lambda_len));
                    rho = state.rho;
                    (q, rejected) = natural_step(&q, &dir, rho);
                }
                StepRule::Adadelta { .. } => {
                    let state = adadelta.as_mut().expect("initialized above");
                    rho = 1.0;
                    (q, rejected) = adadelta_step(&q, &dir, state);
                }
            }
            c = g.cvec.clone();
        } else {
            nonfinite += 1;
            if nonfinite > MAX_NONFINITE {
                return Err(Error::Aborted(format!(
                    "no usable gradient for {nonfinite} consecutive iterations (last at iteration {t}: \
                     lower bound {}, {} of {} draws penalized)",
                    g.lb, g.penalized, config.samples
                )));
            }
        }
        records.push(IterationRecord {
            iteration: t,
            lambda: q.lambda().iter().copied().collect(),
            lb: g.lb / scale,
            rho,
            sims: g.sims_used,
            cumulative_sims: cumulative,
            rejected,
            penalized: g.penalized,
            capped: g.capped,
        });
        if let Some(s) = stopper.as_mut() {
            if g.lb.is_finite() && s.push(g.lb / scale) {
                stopped_early = true;
                break;
            }
        }
    }
    Ok((
        q,
        OptimizerTrace {
            parametrization: F::PARAMETRIZATION,
            dim: model.param_dim(),
            records,
            stopped_early,
        },
    ))
}
