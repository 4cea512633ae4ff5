//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{LikelihoodEstimator, ParticlePolicy};
use crate::matrix::SymMatrix;
use crate::models::stable::StableParams;
use crate::models::{read_observations, AlphaStable, GandK, GkParams, NormalToy, SimulatorModel};
use crate::optimizer::{Likelihood, OptimizerConfig, StepRule, StoppingRule};
use crate::variational::Parametrization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "vbsl")]
    Vbsl,
    #[serde(rename = "vbil")]
    Vbil,
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "pm-mh")]
    PmMh,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Vbsl => "vbsl",
            EstimatorKind::Vbil => "vbil",
            EstimatorKind::Exact => "exact",
            EstimatorKind::PmMh => "pm-mh",
        })
    }
}

/// Observed data: a file, inline values, or a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `y_i ~ N(θ, 1)` with a `N(0, 1)` prior.
    Normal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observations: Option<Vec<f64>>,
        /// `n` observations all equal to zero.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        zeros: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
    },
    AlphaStable {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        synthetic: Option<StableSynthetic>,
    },
    Gandk {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        synthetic: Option<GkSynthetic>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableSynthetic {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub n: usize,
    #[serde(default = "default_data_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GkSynthetic {
    /// `[A, B, g, k]` per margin.
    pub margins: Vec<[f64; 4]>,
    #[serde(default)]
    pub w: Vec<f64>,
    pub n: usize,
    #[serde(default = "default_data_seed")]
    pub seed: u64,
}

fn default_data_seed() -> u64 {
    1
}

/// Starting variational distribution. The mean is given either on the
/// working scale or on the natural scale; the covariance is on the working
/// scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub natural_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmMhSpec {
    /// Random-walk proposal variances on the working scale.
    pub proposal_variance: Vec<f64>,
    #[serde(default)]
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Grid half-width in variational standard deviations.
    #[serde(default = "default_grid_sds")]
    pub grid_sds: f64,
    /// Draws used for the natural-scale moments.
    #[serde(default = "default_moment_draws")]
    pub moment_draws: usize,
    /// Trailing iterations averaged for the reported lower bound.
    #[serde(default = "default_lb_window")]
    pub lb_window: usize,
}

fn default_grid_points() -> usize {
    512
}

fn default_grid_sds() -> f64 {
    4.0
}

fn default_moment_draws() -> usize {
    20_000
}

fn default_lb_window() -> usize {
    10
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            grid_points: default_grid_points(),
            grid_sds: default_grid_sds(),
            moment_draws: default_moment_draws(),
            lb_window: default_lb_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub estimator: EstimatorKind,
    #[serde(default = "default_parametrization")]
    pub parametrization: Parametrization,
    /// Variational draws per iteration.
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub iterations: usize,
    #[serde(default = "default_step_rule")]
    pub step_rule: StepRule,
    #[serde(default = "default_particles")]
    pub particles: ParticlePolicy,
    /// ABC kernel bandwidth, VBIL only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub model: ModelSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pm_mh: Option<PmMhSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<StoppingRule>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_parametrization() -> Parametrization {
    Parametrization::Natural
}

fn default_samples() -> usize {
    100
}

fn default_step_rule() -> StepRule {
    StepRule::adaptive()
}

fn default_particles() -> ParticlePolicy {
    ParticlePolicy::Fixed { n: 50 }
}

impl RunConfig {
    /// Parses and validates a TOML document. Relative data paths stay
    /// relative; see [`RunConfig::resolve_paths`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("<document>", e.message()))?;
        let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(value))
            .map_err(|e| {
                let path = e.path().to_string();
                let field = if path == "." {
                    "<document>".to_string()
                } else {
                    path
                };
                Error::config(field, e.into_inner().to_string())
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let data = match &mut self.model {
            ModelSpec::Normal { data, .. }
            | ModelSpec::AlphaStable { data, .. }
            | ModelSpec::Gandk { data, .. } => data,
        };
        if let Some(p) = data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.model_id(), self.estimator))
    }

    pub fn model_id(&self) -> &'static str {
        match self.model {
            ModelSpec::Normal { .. } => "normal",
            ModelSpec::AlphaStable { .. } => "alpha_stable",
            ModelSpec::Gandk { .. } => "gandk",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        match self.particles {
            ParticlePolicy::Fixed { n } if n < 2 => {
                return Err(Error::config(
                    "particles.n",
                    format!("must be >= 2, got {n}"),
                ));
            }
            ParticlePolicy::Adaptive(a) => {
                a.validate()
                    .map_err(|e| Error::config("particles", e.to_string()))?;
            }
            _ => {}
        }
        match self.estimator {
            EstimatorKind::Vbil => match self.epsilon {
                Some(eps) if eps > 0.0 && eps.is_finite() => {}
                Some(eps) => {
                    return Err(Error::config("epsilon", format!("must be > 0, got {eps}")))
                }
                None => return Err(Error::config("epsilon", "required for the vbil estimator")),
            },
            EstimatorKind::Exact if !matches!(self.model, ModelSpec::Normal { .. }) => {
                return Err(Error::config(
                    "estimator",
                    format!(
                        "`exact` needs a closed-form likelihood, which model `{}` lacks",
                        self.model_id()
                    ),
                ));
            }
            EstimatorKind::PmMh => {
                if !matches!(self.particles, ParticlePolicy::Fixed { .. }) {
                    return Err(Error::config(
                        "particles",
                        "pm-mh needs a fixed particle count",
                    ));
                }
                let spec = self
                    .pm_mh
                    .as_ref()
                    .ok_or_else(|| Error::config("pm_mh", "required for the pm-mh estimator"))?;
                if spec.proposal_variance.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::config(
                        "pm_mh.proposal_variance",
                        "entries must be >= 0",
                    ));
                }
                if spec.burn_in >= self.iterations {
                    return Err(Error::config(
                        "pm_mh.burn_in",
                        "must be smaller than iterations",
                    ));
                }
            }
            _ => {}
        }
        if self.epsilon.is_some() && self.estimator != EstimatorKind::Vbil {
            return Err(Error::config(
                "epsilon",
                format!("only used by vbil, not {}", self.estimator),
            ));
        }
        if self.estimator != EstimatorKind::PmMh {
            self.optimizer_config().validate(self.parametrization)?;
        }
        if self.initial.mean.is_some() && self.initial.natural_mean.is_some() {
            return Err(Error::config(
                "initial",
                "give either `mean` or `natural_mean`, not both",
            ));
        }
        if self.initial.variance.is_some() && self.initial.covariance.is_some() {
            return Err(Error::config(
                "initial",
                "give either `variance` or `covariance`, not both",
            ));
        }
        let o = &self.output;
        if o.grid_points < 2 {
            return Err(Error::config("output.grid_points", "must be >= 2"));
        }
        if !(o.grid_sds > 0.0) {
            return Err(Error::config("output.grid_sds", "must be > 0"));
        }
        if o.moment_draws < 2 {
            return Err(Error::config("output.moment_draws", "must be >= 2"));
        }
        if o.lb_window == 0 {
            return Err(Error::config("output.lb_window", "must be >= 1"));
        }
        self.validate_model_spec()
    }

    fn validate_model_spec(&self) -> Result<()> {
        match &self.model {
            ModelSpec::Normal {
                observations,
                zeros,
                data,
            } => {
                let given =
                    observations.is_some() as u8 + zeros.is_some() as u8 + data.is_some() as u8;
                if given != 1 {
                    return Err(Error::config(
                        "model",
                        "normal needs exactly one of `observations`, `zeros`, `data`",
                    ));
                }
                if observations.as_ref().is_some_and(|o| o.is_empty()) || *zeros == Some(0) {
                    return Err(Error::config("model", "need at least one observation"));
                }
            }
            ModelSpec::AlphaStable { data, synthetic } => {
                if data.is_some() == synthetic.is_some() {
                    return Err(Error::config(
                        "model",
                        "alpha_stable needs exactly one of `data`, `synthetic`",
                    ));
                }
                if let Some(s) = synthetic {
                    if !(s.alpha > 1.1 && s.alpha < 2.0) {
                        return Err(Error::config(
                            "model.synthetic.alpha",
                            "must be in (1.1, 2)",
                        ));
                    }
                    if !(s.beta > -1.0 && s.beta < 1.0) {
                        return Err(Error::config("model.synthetic.beta", "must be in (-1, 1)"));
                    }
                    if !(s.gamma > 0.0) {
                        return Err(Error::config("model.synthetic.gamma", "must be > 0"));
                    }
                    if s.n < 20 {
                        return Err(Error::config("model.synthetic.n", "must be >= 20"));
                    }
                }
            }
            ModelSpec::Gandk { data, synthetic } => {
                if data.is_some() == synthetic.is_some() {
                    return Err(Error::config(
                        "model",
                        "gandk needs exactly one of `data`, `synthetic`",
                    ));
                }
                if let Some(s) = synthetic {
                    gk_params(s)
                        .validate()
                        .map_err(|e| Error::config("model.synthetic", e.to_string()))?;
                    if s.n < 16 {
                        return Err(Error::config("model.synthetic.n", "must be >= 16"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            likelihood: self.likelihood(),
            step_rule: self.step_rule,
            samples: self.samples,
            iterations: self.iterations,
            stopping: self.stopping,
        }
    }

    pub fn likelihood(&self) -> Likelihood {
        match self.estimator {
            EstimatorKind::Exact => Likelihood::Exact,
            EstimatorKind::Vbil => Likelihood::Estimated {
                estimator: LikelihoodEstimator::Abc {
                    epsilon: self.epsilon.unwrap_or(f64::NAN),
                },
                particles: self.particles,
            },
            EstimatorKind::Vbsl | EstimatorKind::PmMh => Likelihood::Estimated {
                estimator: LikelihoodEstimator::UnbiasedLogSl,
                particles: self.particles,
            },
        }
    }

    /// Builds the model, reading or simulating its data.
    pub fn build_model(&self) -> Result<Box<dyn SimulatorModel>> {
        let model: Box<dyn SimulatorModel> = match &self.model {
            ModelSpec::Normal {
                observations,
                zeros,
                data,
            } => {
                let y = if let Some(o) = observations {
                    o.clone()
                } else if let Some(n) = zeros {
                    vec![0.0; *n]
                } else {
                    single_column(read_observations(data.as_deref().expect("validated"))?)?
                };
                Box::new(NormalToy::new(DVector::from_vec(y))?)
            }
            ModelSpec::AlphaStable { data, synthetic } => {
                let y = match (data, synthetic) {
                    (Some(path), _) => single_column(read_observations(path)?)?,
                    (None, Some(s)) => {
                        let p = StableParams::new(s.alpha, s.beta, s.gamma, s.delta);
                        AlphaStable::simulate_data(&p, s.n, &mut ChaCha8Rng::seed_from_u64(s.seed))
                    }
                    (None, None) => unreachable!("validated"),
                };
                Box::new(AlphaStable::from_data(&y)?)
            }
            ModelSpec::Gandk { data, synthetic } => {
                let y = match (data, synthetic) {
                    (Some(path), _) => {
                        let rows = read_observations(path)?;
                        let q = rows.first().map_or(0, Vec::len);
                        DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j])
                    }
                    (None, Some(s)) => crate::models::gandk::gk_simulate(
                        &gk_params(s),
                        s.n,
                        &mut ChaCha8Rng::seed_from_u64(s.seed),
                    ),
                    (None, None) => unreachable!("validated"),
                };
                Box::new(GandK::from_data(&y)?)
            }
        };
        Ok(model)
    }

    /// Starting mean and covariance on the working scale.
    pub fn initial_moments(&self, model: &dyn SimulatorModel) -> Result<(DVector<f64>, SymMatrix)> {
        let p = model.param_dim();
        let check = |field: &str, len: usize| {
            if len == p {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("expected {p} values, got {len}"),
                ))
            }
        };
        let mean = if let Some(m) = &self.initial.mean {
            check("initial.mean", m.len())?;
            DVector::from_column_slice(m)
        } else if let Some(m) = &self.initial.natural_mean {
            check("initial.natural_mean", m.len())?;
            let t = model.transforms();
            let mut out = DVector::zeros(p);
            for i in 0..p {
                out[i] = t[i]
                    .inverse(m[i])
                    .map_err(|e| Error::config("initial.natural_mean", e.to_string()))?;
            }
            out
        } else {
            DVector::zeros(p)
        };
        let cov = if let Some(v) = &self.initial.variance {
            check("initial.variance", v.len())?;
            SymMatrix::from_diagonal(v)
        } else if let Some(rows) = &self.initial.covariance {
            check("initial.covariance", rows.len())?;
            for r in rows {
                check("initial.covariance", r.len())?;
            }
            SymMatrix::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
                .map_err(|e| Error::config("initial.covariance", e.to_string()))?
        } else {
            SymMatrix::identity(p)
        };
        if !cov.is_positive_definite() {
            return Err(Error::config(
                "initial",
                "covariance must be positive definite",
            ));
        }
        Ok((mean, cov))
    }
}

fn gk_params(s: &GkSynthetic) -> GkParams {
    GkParams {
        margins: s.margins.clone(),
        w: s.w.clone(),
    }
}

fn single_column(rows: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    if rows.iter().any(|r| r.len() != 1) {
        return Err(Error::InvalidArgument("expected one value per row".into()));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}
