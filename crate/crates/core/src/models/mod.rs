//! Simulator models: the contract the optimizer needs, plus the built-in
//! normal location, α-stable and g-and-k models.

pub mod gandk;
pub mod mcculloch;
pub mod normal;
pub mod stable;

use std::path::Path;

use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SummaryBatch;

pub use gandk::{GandK, GkParams};
pub use normal::NormalToy;
pub use stable::AlphaStable;

/// A model that can only be simulated from.
///
/// Parameters `θ` live on an unconstrained working scale; the prior density
/// is given on that scale (including any Jacobian the model embeds).
pub trait SimulatorModel: Send + Sync {
    fn name(&self) -> &str;

    /// Working-scale parameter dimension `p`.
    fn param_dim(&self) -> usize;

    /// Summary-statistic dimension `d`.
    fn summary_dim(&self) -> usize;

    fn observed_summary(&self) -> &DVector<f64>;

    /// One simulated summary vector at `theta`.
    fn simulate_summary(&self, theta: &DVector<f64>, rng: &mut dyn RngCore)
        -> Result<DVector<f64>>;

    fn simulate_summaries(
        &self,
        theta: &DVector<f64>,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<SummaryBatch> {
        let cols = (0..count)
            .map(|_| self.simulate_summary(theta, rng))
            .collect::<Result<Vec<_>>>()?;
        SummaryBatch::from_columns(self.summary_dim(), &cols)
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64;

    /// Per-component maps from the working scale to the reporting scale.
    fn transforms(&self) -> Vec<ComponentTransform>;

    fn param_names(&self) -> Vec<String>;

    fn to_natural_scale(&self, theta: &DVector<f64>) -> DVector<f64> {
        let t = self.transforms();
        DVector::from_fn(theta.len(), |i, _| t[i].forward(theta[i]))
    }

    /// Exact log-likelihood, where one is available in closed form.
    fn exact_log_likelihood(&self, _theta: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Lower bounds are reported divided by this factor.
    fn lower_bound_scale(&self) -> f64 {
        1.0
    }
}

/// Map of one parameter from the working scale `t` to its reporting scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentTransform {
    Identity,
    /// `x = exp(t)`
    Exp,
    /// `t = scale · log((x - lower)/(upper - x))`
    Logistic {
        lower: f64,
        upper: f64,
        scale: f64,
    },
}

impl ComponentTransform {
    pub fn forward(&self, t: f64) -> f64 {
        match *self {
            ComponentTransform::Identity => t,
            ComponentTransform::Exp => t.exp(),
            ComponentTransform::Logistic {
                lower,
                upper,
                scale,
            } => lower + (upper - lower) / (1.0 + (-t / scale).exp()),
        }
    }

    pub fn inverse(&self, x: f64) -> Result<f64> {
        match *self {
            ComponentTransform::Identity => Ok(x),
            ComponentTransform::Exp => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(Error::OutOfRange(format!("{x} is not positive")))
                }
            }
            ComponentTransform::Logistic {
                lower,
                upper,
                scale,
            } => {
                if x > lower && x < upper {
                    Ok(scale * ((x - lower) / (upper - x)).ln())
                } else {
                    Err(Error::OutOfRange(format!("{x} outside ({lower}, {upper})")))
                }
            }
        }
    }

    /// `|dt/dx|` at natural-scale `x`, for changing variables in densities.
    pub fn inverse_derivative(&self, x: f64) -> f64 {
        match *self {
            ComponentTransform::Identity => 1.0,
            ComponentTransform::Exp => 1.0 / x,
            ComponentTransform::Logistic {
                lower,
                upper,
                scale,
            } => scale * (1.0 / (x - lower) + 1.0 / (upper - x)),
        }
    }
}

/// Reads numeric observations, one per row, columns separated by commas,
/// semicolons, tabs or spaces. Blank lines and lines starting with `#` are
/// skipped, as is a first row that does not parse as numbers.
pub fn read_observations(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_observations(&text)
}

pub fn parse_observations(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(prev) = rows.first() {
                    if prev.len() != row.len() {
                        return Err(Error::InvalidArgument(format!(
                            "line {}: expected {} columns, found {}",
                            lineno + 1,
                            prev.len(),
                            row.len()
                        )));
                    }
                }
                rows.push(row);
            }
            Err(_) if first => {}
            Err(e) => {
                return Err(Error::InvalidArgument(format!("line {}: {e}", lineno + 1)));
            }
        }
        first = false;
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    Ok(rows)
}
