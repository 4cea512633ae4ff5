use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variational::{GaussianFamily, Proposal};

/// Step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `ρ_t = 1/(a + t)`, `t = 1, 2, …`
    Fixed { a: f64 },
    /// Signal-to-noise adaptive rate on the natural gradient.
    Adaptive {
        /// Gradient batches used to initialize the running averages.
        #[serde(default = "default_init_batches")]
        init_batches: usize,
        /// Dimension in the step cap `√(dim/c̄)`; `None` uses `dim(λ)`.
        #[serde(default)]
        cap_dim: Option<usize>,
    },
    /// Per-coordinate ADADELTA on the ordinary gradient (Cholesky only).
    Adadelta {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_adadelta_eps")]
        eps: f64,
    },
}

pub fn default_init_batches() -> usize {
    5
}

pub fn default_decay() -> f64 {
    0.95
}

pub fn default_adadelta_eps() -> f64 {
    1e-6
}

impl StepRule {
    pub fn adaptive() -> Self {
        StepRule::Adaptive {
            init_batches: default_init_batches(),
            cap_dim: None,
        }
    }

    pub fn adadelta() -> Self {
        StepRule::Adadelta {
            decay: default_decay(),
            eps: default_adadelta_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::Fixed { a } if !(a > -1.0 && a.is_finite()) => Err(Error::config(
                "step_rule.a",
                format!("must be > -1, got {a}"),
            )),
            StepRule::Adaptive {
                init_batches: 0, ..
            } => Err(Error::config("step_rule.init_batches", "must be >= 1")),
            StepRule::Adaptive {
                cap_dim: Some(0), ..
            } => Err(Error::config("step_rule.cap_dim", "must be >= 1")),
            StepRule::Adadelta { decay, .. } if !(decay > 0.0 && decay < 1.0) => Err(
                Error::config("step_rule.decay", format!("must be in (0, 1), got {decay}")),
            ),
            StepRule::Adadelta { eps, .. } if !(eps > 0.0) => Err(Error::config(
                "step_rule.eps",
                format!("must be > 0, got {eps}"),
            )),
            _ => Ok(()),
        }
    }
}

/// `ρ_t = 1/(a + t)`.
pub fn fixed_rate(a: f64, t: usize) -> f64 {
    1.0 / (a + t as f64)
}

/// Running averages of the natural gradient and its squared norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRateState {
    pub nbar: DVector<f64>,
    pub cbar: f64,
    pub alpha: f64,
    pub rho: f64,
}

impl AdaptiveRateState {
    /// Starts from `K` independent natural-gradient estimates, `α₀ = 1/K`.
    pub fn from_initial(estimates: &[DVector<f64>]) -> Result<Self> {
        let k = estimates.len();
        if k == 0 {
            return Err(Error::InvalidArgument(
                "need at least one initial gradient".into(),
            ));
        }
        let nbar = estimates
            .iter()
            .fold(DVector::zeros(estimates[0].len()), |acc, n| acc + n)
            / k as f64;
        let cbar = estimates.iter().map(|n| n.norm_squared()).sum::<f64>() / k as f64;
        if !(cbar > 0.0) || !cbar.is_finite() {
            return Err(Error::InvalidArgument(
                "initial gradients are zero or not finite".into(),
            ));
        }
        Ok(AdaptiveRateState {
            rho: nbar.norm_squared() / cbar,
            nbar,
            cbar,
            alpha: 1.0 / k as f64,
        })
    }
}

/// One update of the recursions
/// `n̄ ← (1-α)n̄ + α n̂`, `c̄ ← (1-α)c̄ + α n̂ᵀn̂`, `ρ = n̄ᵀn̄/c̄`,
/// with `ρ` capped at `√(dim/c̄)` and then `α⁻¹ ← α⁻¹(1-ρ) + 1`.
pub fn adaptive_rate_update(
    state: &AdaptiveRateState,
    nhat: &DVector<f64>,
    dim: usize,
) -> AdaptiveRateState {
    let a = state.alpha;
    let nbar = &state.nbar * (1.0 - a) + nhat * a;
    let cbar = (1.0 - a) * state.cbar + a * nhat.norm_squared();
    let raw = nbar.norm_squared() / cbar;
    let rho = raw.min((dim as f64 / cbar).sqrt());
    let alpha = 1.0 / ((1.0 - rho) / a + 1.0);
    AdaptiveRateState {
        nbar,
        cbar,
        alpha,
        rho,
    }
}

/// ADADELTA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: DVector<f64>,
    pub sq_step: DVector<f64>,
    pub decay: f64,
    pub eps: f64,
}

impl AdadeltaState {
    pub fn new(len: usize, decay: f64, eps: f64) -> Self {
        AdadeltaState {
            sq_grad: DVector::zeros(len),
            sq_step: DVector::zeros(len),
            decay,
            eps,
        }
    }

    /// Updates the accumulators and returns the ascent step for `grad`.
    pub fn step(&mut self, grad: &DVector<f64>) -> DVector<f64> {
        let r = self.decay;
        let mut delta = DVector::zeros(grad.len());
        for i in 0..grad.len() {
            self.sq_grad[i] = r * self.sq_grad[i] + (1.0 - r) * grad[i] * grad[i];
            delta[i] = ((self.sq_step[i] + self.eps).sqrt() / (self.sq_grad[i] + self.eps).sqrt())
                * grad[i];
            self.sq_step[i] = r * self.sq_step[i] + (1.0 - r) * delta[i] * delta[i];
        }
        delta
    }
}

/// `λ + ρ · direction`. A proposal whose covariance is invalid leaves `q`
/// unchanged and reports `rejected = true`.
pub fn natural_step<F: GaussianFamily>(q: &F, direction: &DVector<f64>, rho: f64) -> (F, bool) {
    if rho == 0.0 {
        return (q.clone(), false);
    }
    match q.shifted(&(direction * rho)) {
        Proposal::Accepted(next) => (next, false),
        Proposal::Rejected => (q.clone(), true),
    }
}

/// One ADADELTA ascent step on `λ` using the ordinary gradient.
pub fn adadelta_step<F: GaussianFamily>(
    q: &F,
    grad: &DVector<f64>,
    state: &mut AdadeltaState,
) -> (F, bool) {
    let delta = state.step(grad);
    match q.shifted(&delta) {
        Proposal::Accepted(next) => (next, false),
        Proposal::Rejected => (q.clone(), true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{LowerTriMatrix, SymMatrix};
    use crate::variational::{CholeskyGaussianParams, NaturalGaussianParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_gradient_drives_rate_to_one() {
        let v = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let mut s = AdaptiveRateState::from_initial(&vec![v.clone(); 5]).unwrap();
        for _ in 0..50 {
            s = adaptive_rate_update(&s, &v, 1000);
        }
        assert!((s.rho - 1.0).abs() < 1e-12);
        assert!(s.alpha > 0.0 && s.alpha <= 1.0);
    }

    #[test]
    fn pure_noise_gives_small_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = || DVector::from_fn(10, |_, _| StandardNormal.sample(&mut rng));
        let init: Vec<_> = (0..5).map(|_| draw()).collect();
        let mut s = AdaptiveRateState::from_initial(&init).unwrap();
        let mut tail = 0.0;
        for t in 0..2000 {
            s = adaptive_rate_update(&s, &draw(), 10_000);
            assert!(s.rho > 0.0 && s.alpha > 0.0 && s.alpha <= 1.0);
            if t >= 1000 {
                tail += s.rho / 1000.0;
            }
        }
        assert!(tail < 0.05, "{tail}");
    }

    #[test]
    fn cap_binds() {
        let v = DVector::from_vec(vec![10.0, 0.0]);
        let s = AdaptiveRateState::from_initial(std::slice::from_ref(&v)).unwrap();
        let next = adaptive_rate_update(&s, &v, 2);
        assert!((next.cbar - 100.0).abs() < 1e-12);
        assert!((next.rho - (2.0f64 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let q = NaturalGaussianParams::from_moments(&DVector::zeros(2), &SymMatrix::identity(2))
            .unwrap();
        let (next, rejected) = natural_step(&q, &DVector::from_element(5, 3.0), 0.0);
        assert!(!rejected);
        assert_eq!(next.lambda(), q.lambda());
    }

    #[test]
    fn indefinite_proposal_is_rejected() {
        let q = NaturalGaussianParams::from_moments(&DVector::zeros(1), &SymMatrix::identity(1))
            .unwrap();
        // λ₂ = -½; pushing it to +½ makes the precision negative.
        let (next, rejected) = natural_step(&q, &DVector::from_vec(vec![0.0, 1.0]), 1.0);
        assert!(rejected);
        assert_eq!(next.lambda(), q.lambda());
    }

    #[test]
    fn unit_natural_step_solves_conjugate_normal() {
        // Target N(m, v): the exact gradient of the lower bound in natural
        // coordinates is I_F (λ* - λ), so one unit step lands on λ*.
        let (m, v) = (0.7, 0.3);
        let target = NaturalGaussianParams::from_moments(
            &DVector::from_element(1, m),
            &SymMatrix::from_diagonal(&[v]),
        )
        .unwrap();
        for &(mu0, s0) in &[(0.0, 1.0), (-3.0, 0.05), (2.0, 4.0)] {
            let q = NaturalGaussianParams::from_moments(
                &DVector::from_element(1, mu0),
                &SymMatrix::from_diagonal(&[s0]),
            )
            .unwrap();
            let grad = q.fisher() * (target.lambda() - q.lambda());
            let dir = q.natural_direction(&grad).unwrap();
            let (next, rejected) = natural_step(&q, &dir, 1.0);
            assert!(!rejected);
            assert!((next.lambda() - target.lambda()).amax() < 1e-10);
        }
    }

    #[test]
    fn adadelta_zero_gradient_and_decay() {
        let c = LowerTriMatrix::from_vech(&DVector::from_element(1, 1.0)).unwrap();
        let q = CholeskyGaussianParams::new(DVector::zeros(1), c).unwrap();
        let mut st = AdadeltaState::new(2, 0.95, 1e-6);
        st.sq_grad = DVector::from_element(2, 4.0);
        let (next, _) = adadelta_step(&q, &DVector::zeros(2), &mut st);
        assert_eq!(next.lambda(), q.lambda());
        for _ in 0..99 {
            st.step(&DVector::zeros(2));
        }
        assert!(st.sq_grad[0] <= 0.95f64.powi(100) * 4.0 * (1.0 + 1e-12));
    }

    #[test]
    fn adadelta_ascends_quadratic() {
        // Maximize -(x - 3)²/2 over x = λ₀ (the mean).
        let c = LowerTriMatrix::from_vech(&DVector::from_element(1, 1.0)).unwrap();
        let mut q = CholeskyGaussianParams::new(DVector::zeros(1), c).unwrap();
        let mut st = AdadeltaState::new(2, 0.95, 1e-6);
        let obj = |x: f64| -(x - 3.0) * (x - 3.0) / 2.0;
        let mut prev = obj(q.mean()[0]);
        for _ in 0..200 {
            let g = DVector::from_vec(vec![3.0 - q.mean()[0], 0.0]);
            q = adadelta_step(&q, &g, &mut st).0;
            let now = obj(q.mean()[0]);
            assert!(now >= prev - 1e-12);
            prev = now;
        }
        assert!(prev > obj(0.0));
    }
}
