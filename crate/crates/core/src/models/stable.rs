//! Univariate α-stable model with McCulloch quantile summaries.
//!
//! The characteristic function is the continuous one,
//! `exp{iδt - γ^α|t|^α (1 + iβ tan(πα/2) sgn(t)(|γt|^{1-α} - 1))}` for
//! `α ≠ 1`, so `δ` stays a location parameter as `α` varies. Working
//! parameters are `(log((α-1.1)/(2-α)), log((1+β)/(1-β)), log γ, δ)`.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Exp1, Open01};

use super::mcculloch::{mcculloch, McCullochEstimate};
use super::{ComponentTransform, SimulatorModel};
use crate::error::{Error, Result};
use crate::stats::{normal_ln_pdf, quantile_sorted};

pub const ALPHA_MIN: f64 = 1.1;
pub const ALPHA_MAX: f64 = 2.0;

/// Summary estimates are pulled this far inside the constraint set before
/// being mapped to the working scale.
const EDGE_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        StableParams {
            alpha,
            beta,
            gamma,
            delta,
        }
    }

    pub fn from_tilde(t: &DVector<f64>) -> Self {
        let tr = AlphaStable::component_transforms();
        StableParams::new(
            tr[0].forward(t[0]),
            tr[1].forward(t[1]),
            tr[2].forward(t[2]),
            t[3],
        )
    }

    pub fn to_tilde(&self) -> Result<DVector<f64>> {
        let tr = AlphaStable::component_transforms();
        Ok(DVector::from_vec(vec![
            tr[0].inverse(self.alpha)?,
            tr[1].inverse(self.beta)?,
            tr[2].inverse(self.gamma)?,
            self.delta,
        ]))
    }
}

/// One draw by the Chambers–Mallows–Stuck construction.
pub fn stable_draw<R: Rng + ?Sized>(p: &StableParams, rng: &mut R) -> f64 {
    let u = PI * (rng.sample::<f64, _>(Open01) - 0.5);
    let w: f64 = rng.sample(Exp1);
    stable_from_uniforms(p, u, w)
}

/// The CMS map applied to `U ~ U(-π/2, π/2)` and `W ~ Exp(1)`.
pub fn stable_from_uniforms(p: &StableParams, u: f64, w: f64) -> f64 {
    let StableParams {
        alpha,
        beta,
        gamma,
        delta,
    } = *p;
    if alpha == 1.0 {
        let half = FRAC_PI_2 + beta * u;
        let x = FRAC_2_PI * (half * u.tan() - beta * ((FRAC_PI_2 * w * u.cos()) / half).ln());
        // The continuous location absorbs the (2/π)βγ log γ shift.
        return gamma * x + delta;
    }
    let t = (PI * alpha / 2.0).tan();
    let zeta = -beta * t;
    let xi = (beta * t).atan() / alpha;
    let x = (1.0 + zeta * zeta).powf(1.0 / (2.0 * alpha)) * (alpha * (u + xi)).sin()
        / u.cos().powf(1.0 / alpha)
        * ((u - alpha * (u + xi)).cos() / w).powf((1.0 - alpha) / alpha);
    // x is standard in the discontinuous form; shift to the continuous one.
    gamma * x + delta - beta * gamma * t
}

/// Maps a McCulloch estimate to the working scale, pulling `α` and `β`
/// inside their open constraint intervals. The flag reports clamping.
pub fn summary_from_estimate(e: &McCullochEstimate) -> (DVector<f64>, bool) {
    let a_lo = ALPHA_MIN + EDGE_MARGIN;
    let a_hi = ALPHA_MAX - EDGE_MARGIN;
    let b_hi = 1.0 - EDGE_MARGIN;
    let alpha = e.alpha.clamp(a_lo, a_hi);
    let beta = e.beta.clamp(-b_hi, b_hi);
    let clamped = e.clamped || alpha != e.alpha || beta != e.beta;
    let s = DVector::from_vec(vec![
        ((alpha - ALPHA_MIN) / (ALPHA_MAX - alpha)).ln(),
        ((1.0 + beta) / (1.0 - beta)).ln(),
        e.gamma.ln(),
        e.delta,
    ]);
    (s, clamped)
}

/// Working-scale summary of a data set.
pub fn summarize(data: &[f64]) -> Result<(DVector<f64>, bool)> {
    Ok(summary_from_estimate(&mcculloch(data)?))
}

#[derive(Debug, Clone)]
pub struct AlphaStable {
    n_obs: usize,
    observed: DVector<f64>,
    observed_clamped: bool,
}

impl AlphaStable {
    pub fn from_data(data: &[f64]) -> Result<Self> {
        let (observed, observed_clamped) = summarize(data)?;
        Ok(AlphaStable {
            n_obs: data.len(),
            observed,
            observed_clamped,
        })
    }

    /// Simulated data set of size `n` at natural-scale parameters.
    pub fn simulate_data<R: Rng + ?Sized>(p: &StableParams, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| stable_draw(p, rng)).collect()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Whether the observed summary had to be clamped.
    pub fn observed_clamped(&self) -> bool {
        self.observed_clamped
    }

    pub fn component_transforms() -> [ComponentTransform; 4] {
        [
            ComponentTransform::Logistic {
                lower: ALPHA_MIN,
                upper: ALPHA_MAX,
                scale: 1.0,
            },
            ComponentTransform::Logistic {
                lower: -1.0,
                upper: 1.0,
                scale: 1.0,
            },
            ComponentTransform::Exp,
            ComponentTransform::Identity,
        ]
    }
}

impl SimulatorModel for AlphaStable {
    fn name(&self) -> &str {
        "alpha_stable"
    }

    fn param_dim(&self) -> usize {
        4
    }

    fn summary_dim(&self) -> usize {
        4
    }

    fn observed_summary(&self) -> &DVector<f64> {
        &self.observed
    }

    fn simulate_summary(
        &self,
        theta: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        let p = StableParams::from_tilde(theta);
        let mut data = Self::simulate_data(&p, self.n_obs, rng);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite stable draw".into()));
        }
        data.sort_unstable_by(f64::total_cmp);
        let q = [0.05, 0.25, 0.5, 0.75, 0.95].map(|pr| quantile_sorted(&data, pr));
        let e = super::mcculloch::from_quantiles(q[0], q[1], q[2], q[3], q[4])?;
        Ok(summary_from_estimate(&e).0)
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64 {
        theta.iter().map(|&t| normal_ln_pdf(t, 0.0, 1.0)).sum()
    }

    fn transforms(&self) -> Vec<ComponentTransform> {
        Self::component_transforms().to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        ["alpha", "beta", "gamma", "delta"]
            .map(String::from)
            .to_vec()
    }
}
