//! Experiment runner: builds a model and an inference run from a
//! [`RunConfig`], and turns the result into a self-describing report plus
//! plot-ready text files.

mod compare;
mod config;

pub use compare::{compare_reports, Comparison, ComparisonRow};
pub use config::{
    EstimatorKind, GkSynthetic, InitialSpec, ModelSpec, OutputSpec, PmMhSpec, RunConfig,
    StableSynthetic,
};

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::models::{ComponentTransform, SimulatorModel};
use crate::optimizer::{self, OptimizerTrace, StepRule};
use crate::pmmh::{pm_mh, Chain};
use crate::stats::{batch_means_se, mean, normal_quantile, trapezoid};
use crate::variational::{
    CholeskyGaussianParams, GaussianFamily, NaturalGaussianParams, Parametrization,
};

/// Stream reserved for the natural-scale moment draws.
const MOMENT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    /// Working-scale posterior mean and standard deviation.
    pub mean: f64,
    pub sd: f64,
    /// Monte Carlo error of `mean`: the spread of the variational mean over
    /// the trailing lower-bound window, or the batch-means standard error of
    /// a chain.
    pub mc_error: f64,
    pub natural_mean: f64,
    pub natural_sd: f64,
    /// Central 99% interval on the natural scale.
    pub natural_interval_99: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub total_simulations: usize,
    pub likelihood_estimates: usize,
    pub mean_particles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub particles: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub trace: Option<String>,
    pub chain: Option<String>,
    pub densities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub model: String,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub param_names: Vec<String>,
    pub observed_summary: Vec<f64>,
    pub posterior: Vec<ParamSummary>,
    pub working: Moments,
    pub natural: Moments,
    /// Mean lower bound over the trailing window; absent for chains.
    pub final_lb: Option<f64>,
    /// Lower bound per iteration, starting with the initialization at 0.
    /// Non-finite values are null.
    pub lb_trace: Vec<Option<f64>>,
    pub rho_trace: Vec<f64>,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub rejected_steps: usize,
    pub budget: Budget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSummary>,
    pub files: OutputFiles,
    /// The configuration with every default filled in.
    pub config: RunConfig,
}

impl RunReport {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    /// Finite lower bounds of iterations `1..`, with gaps as `NaN`.
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.lb_trace
            .iter()
            .skip(1)
            .map(|v| v.unwrap_or(f64::NAN))
            .collect()
    }
}

/// Marginal density of one parameter on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub name: String,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Option<OptimizerTrace>,
    pub chain: Option<Chain>,
    pub densities: Vec<DensityGrid>,
}

/// Runs the configured experiment. The result depends only on `config`
/// (including its seed), not on the number of worker threads.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let model = config.build_model()?;
    let (mu0, cov0) = config.initial_moments(model.as_ref())?;
    match (config.estimator, config.parametrization) {
        (EstimatorKind::PmMh, _) => run_chain(config, model.as_ref(), &mu0),
        (_, Parametrization::Natural) => run_vb(
            config,
            model.as_ref(),
            NaturalGaussianParams::from_moments(&mu0, &cov0)?,
        ),
        (_, Parametrization::Cholesky) => run_vb(
            config,
            model.as_ref(),
            CholeskyGaussianParams::from_moments(&mu0, &cov0)?,
        ),
    }
}

fn run_vb<F: GaussianFamily>(
    config: &RunConfig,
    model: &dyn SimulatorModel,
    q0: F,
) -> Result<RunOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (q, trace) = optimizer::run(&config.optimizer_config(), model, q0, &mut rng)?;
    let names = model.param_names();
    let transforms = model.transforms();
    let p = model.param_dim();
    let window = config.output.lb_window;

    let lbs: Vec<f64> = trace.lower_bounds();
    let final_lb = trailing_mean(&lbs, window);

    // Spread of μ over the trailing window.
    let tail: Vec<DVector<f64>> = trace
        .records
        .iter()
        .skip(1)
        .rev()
        .take(window)
        .map(|r| {
            F::from_lambda(&DVector::from_column_slice(&r.lambda), p).map(|f| f.mean().clone())
        })
        .collect::<Result<_>>()?;
    let mc_error: Vec<f64> = (0..p)
        .map(|i| {
            let xs: Vec<f64> = tail.iter().map(|m| m[i]).collect();
            if xs.len() > 1 {
                crate::stats::variance(&xs).sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let mu = q.mean().clone();
    let cov = q.covariance().clone();
    let natural = natural_moments(&q, &transforms, config.output.moment_draws, config.seed);
    let z = normal_quantile(0.995);
    let posterior = (0..p)
        .map(|i| {
            let sd = cov[(i, i)].sqrt();
            let lo = transforms[i].forward(mu[i] - z * sd);
            let hi = transforms[i].forward(mu[i] + z * sd);
            ParamSummary {
                name: names[i].clone(),
                mean: mu[i],
                sd,
                mc_error: mc_error[i],
                natural_mean: natural.mean[i],
                natural_sd: natural.covariance[i][i].sqrt(),
                natural_interval_99: [lo.min(hi), lo.max(hi)],
            }
        })
        .collect();
    let densities = (0..p)
        .map(|i| {
            density_grid(
                &names[i],
                mu[i],
                cov[(i, i)].sqrt(),
                &transforms[i],
                config.output.grid_points,
                config.output.grid_sds,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let batches = trace.records.len()
        + match config.step_rule {
            StepRule::Adaptive { init_batches, .. } => init_batches,
            _ => 0,
        };
    let estimates = if config.estimator == EstimatorKind::Exact {
        0
    } else {
        batches * config.samples
    };
    let total = trace.total_sims();
    let report = RunReport {
        label: config.label(),
        model: model.name().to_string(),
        estimator: config.estimator,
        seed: config.seed,
        param_names: names,
        observed_summary: model.observed_summary().iter().copied().collect(),
        posterior,
        working: Moments {
            mean: mu.iter().copied().collect(),
            covariance: rows(&cov),
        },
        natural,
        final_lb,
        lb_trace: trace
            .records
            .iter()
            .map(|r| Some(r.lb).filter(|v| v.is_finite()))
            .collect(),
        rho_trace: trace.records.iter().map(|r| r.rho).collect(),
        iterations_run: trace.records.len() - 1,
        stopped_early: trace.stopped_early,
        rejected_steps: trace.records.iter().filter(|r| r.rejected).count(),
        budget: Budget {
            total_simulations: total,
            likelihood_estimates: estimates,
            mean_particles: if estimates > 0 {
                total as f64 / estimates as f64
            } else {
                0.0
            },
        },
        chain: None,
        files: OutputFiles::default(),
        config: config.clone(),
    };
    Ok(RunOutput {
        report,
        trace: Some(trace),
        chain: None,
        densities,
    })
}

fn run_chain(
    config: &RunConfig,
    model: &dyn SimulatorModel,
    theta0: &DVector<f64>,
) -> Result<RunOutput> {
    let spec = config.pm_mh.as_ref().expect("validated");
    let p = model.param_dim();
    if spec.proposal_variance.len() != p {
        return Err(Error::config(
            "pm_mh.proposal_variance",
            format!("expected {p} values, got {}", spec.proposal_variance.len()),
        ));
    }
    let n = config.particles.min_particles();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let chain = pm_mh(
        model,
        theta0,
        config.iterations,
        &SymMatrix::from_diagonal(&spec.proposal_variance),
        n,
        &mut rng,
    )?;
    let names = model.param_names();
    let transforms = model.transforms();
    let kept: Vec<&[f64]> = chain.states[spec.burn_in..]
        .iter()
        .map(|s| s.theta.as_slice())
        .collect();
    let working = sample_moments(&kept);
    let natural_draws: Vec<Vec<f64>> = kept
        .iter()
        .map(|t| {
            t.iter()
                .zip(&transforms)
                .map(|(v, tr)| tr.forward(*v))
                .collect()
        })
        .collect();
    let natural = sample_moments(&natural_draws.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let posterior = (0..p)
        .map(|i| {
            let xs = chain.component(i, spec.burn_in);
            let nat: Vec<f64> = natural_draws.iter().map(|d| d[i]).collect();
            let q = crate::stats::quantiles(&nat, &[0.005, 0.995]);
            ParamSummary {
                name: names[i].clone(),
                mean: working.mean[i],
                sd: working.covariance[i][i].sqrt(),
                mc_error: batch_means_se(&xs),
                natural_mean: natural.mean[i],
                natural_sd: natural.covariance[i][i].sqrt(),
                natural_interval_99: [q[0], q[1]],
            }
        })
        .collect();
    let estimates = chain.simulations / n;
    let report = RunReport {
        label: config.label(),
        model: model.name().to_string(),
        estimator: config.estimator,
        seed: config.seed,
        param_names: names,
        observed_summary: model.observed_summary().iter().copied().collect(),
        posterior,
        working,
        natural,
        final_lb: None,
        lb_trace: Vec::new(),
        rho_trace: Vec::new(),
        iterations_run: chain.states.len(),
        stopped_early: false,
        rejected_steps: chain.states.len() - chain.accepted,
        budget: Budget {
            total_simulations: chain.simulations,
            likelihood_estimates: estimates,
            mean_particles: n as f64,
        },
        chain: Some(ChainSummary {
            acceptance_rate: chain.acceptance_rate(),
            burn_in: spec.burn_in,
            particles: n,
            kept: kept.len(),
        }),
        files: OutputFiles::default(),
        config: config.clone(),
    };
    Ok(RunOutput {
        report,
        trace: None,
        chain: Some(chain),
        densities: Vec::new(),
    })
}

fn rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim())
        .map(|i| (0..m.dim()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn sample_moments(draws: &[&[f64]]) -> Moments {
    let p = draws.first().map_or(0, |d| d.len());
    let n = draws.len() as f64;
    let m: Vec<f64> = (0..p)
        .map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / n)
        .collect();
    let covariance = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    draws
                        .iter()
                        .map(|d| (d[i] - m[i]) * (d[j] - m[j]))
                        .sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect();
    Moments {
        mean: m,
        covariance,
    }
}

/// Moments of the natural-scale parameters under `q`, by simulation.
fn natural_moments<F: GaussianFamily>(
    q: &F,
    transforms: &[ComponentTransform],
    draws: usize,
    seed: u64,
) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MOMENT_STREAM);
    let xs: Vec<Vec<f64>> = q
        .sample(draws, &mut rng)
        .into_iter()
        .map(|t| {
            t.iter()
                .zip(transforms)
                .map(|(v, tr)| tr.forward(*v))
                .collect()
        })
        .collect();
    let mut m = sample_moments(&xs.iter().map(Vec::as_slice).collect::<Vec<_>>());
    // Untransformed components are known exactly.
    let exact: Vec<usize> = (0..q.dim())
        .filter(|&i| transforms[i] == ComponentTransform::Identity)
        .collect();
    for &i in &exact {
        m.mean[i] = q.mean()[i];
        for &j in &exact {
            m.covariance[i][j] = q.covariance()[(i, j)];
        }
    }
    m
}

/// Mean of the last `window` finite values, if any.
pub fn trailing_mean(values: &[f64], window: usize) -> Option<f64> {
    let tail: Vec<f64> = values
        .iter()
        .rev()
        .take(window)
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    (!tail.is_empty()).then(|| mean(&tail))
}

/// First iteration (1-based) at which the trailing `window`-mean of `lbs`
/// reaches `target`.
pub fn iterations_to_reach(lbs: &[f64], target: f64, window: usize) -> Option<usize> {
    let w = window.max(1);
    (w..=lbs.len()).find(|&t| mean(&lbs[t - w..t]) >= target)
}

/// Density of `x = transform(t)` for `t ~ N(mean, sd²)`, tabulated at
/// `points` abscissae covering `mean ± sds·sd` on the working scale and
/// normalized to unit trapezoid area on the natural scale.
pub fn density_grid(
    name: &str,
    mean: f64,
    sd: f64,
    transform: &ComponentTransform,
    points: usize,
    sds: f64,
) -> Result<DensityGrid> {
    if !(sd > 0.0) || points < 2 {
        return Err(Error::InvalidArgument(format!(
            "density grid for `{name}` needs sd > 0 and >= 2 points"
        )));
    }
    let step = 2.0 * sds * sd / (points - 1) as f64;
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let t = mean - sds * sd + step * k as f64;
            let z = (t - mean) / sd;
            let x = transform.forward(t);
            let dens = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                * transform.inverse_derivative(x);
            (x, dens)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.dedup_by(|a, b| a.0 == b.0);
    let (x, mut density): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let area = trapezoid(&x, &density);
    if !(area > 0.0) || !area.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "density grid for `{name}` has zero area"
        )));
    }
    density.iter_mut().for_each(|d| *d /= area);
    Ok(DensityGrid {
        name: name.to_string(),
        x,
        density,
    })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

/// Writes `report.json`, the trace or chain CSV and the density grids into
/// `dir`, recording the file names in the report. Returns the final report.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut report = output.report.clone();
    if let Some(trace) = &output.trace {
        let name = "trace.csv";
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let k = trace.records.first().map_or(0, |r| r.lambda.len());
        let mut header: Vec<String> = [
            "iteration",
            "lb",
            "rho",
            "sims",
            "cumulative_sims",
            "rejected",
            "penalized",
            "capped",
        ]
        .map(String::from)
        .to_vec();
        header.extend((1..=k).map(|i| format!("lambda_{i}")));
        w.write_record(&header).map_err(csv_err(&path))?;
        for r in &trace.records {
            let mut row = vec![
                r.iteration.to_string(),
                r.lb.to_string(),
                r.rho.to_string(),
                r.sims.to_string(),
                r.cumulative_sims.to_string(),
                (r.rejected as u8).to_string(),
                r.penalized.to_string(),
                r.capped.to_string(),
            ];
            row.extend(r.lambda.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        report.files.trace = Some(name.to_string());
    }
    if let Some(chain) = &output.chain {
        let name = "chain.csv";
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let mut header = vec!["iteration".to_string()];
        header.extend(report.param_names.iter().cloned());
        header.extend(["log_like", "log_prior"].map(String::from));
        w.write_record(&header).map_err(csv_err(&path))?;
        for (i, s) in chain.states.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(s.theta.iter().map(f64::to_string));
            row.push(s.log_like.to_string());
            row.push(s.log_prior.to_string());
            w.write_record(&row).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        report.files.chain = Some(name.to_string());
    }
    for grid in &output.densities {
        let name = format!("density_{}.txt", file_safe(&grid.name));
        let path = dir.join(&name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
        writeln!(f, "# {} density", grid.name).map_err(io_err(&path))?;
        for (x, d) in grid.x.iter().zip(&grid.density) {
            writeln!(f, "{x} {d}").map_err(io_err(&path))?;
        }
        f.flush().map_err(io_err(&path))?;
        report.files.densities.push(name);
    }
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(report)
}
