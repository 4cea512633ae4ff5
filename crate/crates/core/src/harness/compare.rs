use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{iterations_to_reach, RunReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub estimator: String,
    pub final_lb: Option<f64>,
    /// Iterations until the trailing-window lower bound is within `delta`
    /// of the best final lower bound among the compared runs.
    pub iterations_to_within: Option<usize>,
    pub total_simulations: usize,
    /// Per parameter: working-scale mean, sd and Monte Carlo error.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub mc_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub param_names: Vec<String>,
    pub delta: f64,
    pub best_lb: Option<f64>,
    pub rows: Vec<ComparisonRow>,
}

/// Tabulates two or more reports over the same model and data.
pub fn compare_reports(reports: &[RunReport], delta: f64) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "compare needs at least two reports, got {}",
            reports.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be > 0, got {delta}"
        )));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.model != first.model || r.param_names != first.param_names {
            return Err(Error::InvalidArgument(format!(
                "mismatched models: `{}` ({}) vs `{}` ({})",
                first.label, first.model, r.label, r.model
            )));
        }
        if r.observed_summary != first.observed_summary {
            return Err(Error::InvalidArgument(format!(
                "mismatched models: `{}` and `{}` were fitted to different data",
                first.label, r.label
            )));
        }
    }
    let best_lb = reports.iter().filter_map(|r| r.final_lb).reduce(f64::max);
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            label: r.label.clone(),
            estimator: r.estimator.to_string(),
            final_lb: r.final_lb,
            iterations_to_within: best_lb.filter(|_| r.final_lb.is_some()).and_then(|b| {
                iterations_to_reach(&r.lower_bounds(), b - delta, r.config.output.lb_window)
            }),
            total_simulations: r.budget.total_simulations,
            mean: r.posterior.iter().map(|p| p.mean).collect(),
            sd: r.posterior.iter().map(|p| p.sd).collect(),
            mc_error: r.posterior.iter().map(|p| p.mc_error).collect(),
        })
        .collect();
    Ok(Comparison {
        model: first.model.clone(),
        param_names: first.param_names.clone(),
        delta,
        best_lb,
        rows,
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl Comparison {
    /// Plain-text table, one row per run.
    pub fn render(&self) -> String {
        let mut header = vec![
            "run".to_string(),
            "estimator".to_string(),
            "final_lb".to_string(),
            format!("iters_within_{}", self.delta),
            "sims".to_string(),
        ];
        for n in &self.param_names {
            header.push(format!("{n}_mean"));
            header.push(format!("{n}_sd"));
            header.push(format!("{n}_mcse"));
        }
        let mut table = vec![header];
        for r in &self.rows {
            let mut row = vec![
                r.label.clone(),
                r.estimator.clone(),
                opt(r.final_lb.map(|v| format!("{v:.4}"))),
                opt(r.iterations_to_within),
                r.total_simulations.to_string(),
            ];
            for i in 0..r.mean.len() {
                row.push(format!("{:.4}", r.mean[i]));
                row.push(format!("{:.4}", r.sd[i]));
                row.push(format!("{:.4}", r.mc_error[i]));
            }
            table.push(row);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model);
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
