use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vbsl::harness::{compare_reports, run_experiment, write_outputs, RunConfig, RunReport};

/// Likelihood-free variational Bayes with synthetic likelihoods.
#[derive(Parser, Debug)]
#[command(name = "vbsl", version, about)]
struct Cli {
    /// Override the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for run outputs (default: `runs/<config name>`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads for the per-iteration simulations (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a TOML configuration.
    Run { config: PathBuf },
    /// Tabulate two or more run reports over the same model.
    Compare {
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Lower-bound tolerance for the iterations-to-within column.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::from_path(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run(cli: &Cli, path: &Path) -> Result<()> {
    let config = load_config(path, cli.seed)?;
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| {
        let stem = path
            .file_stem()
            .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        Path::new("runs").join(stem)
    });
    let output = run_experiment(&config).with_context(|| format!("running {}", path.display()))?;
    let report = write_outputs(&output, &out_dir)?;
    println!(
        "{}: {} on {} (seed {})",
        report.label, report.estimator, report.model, report.seed
    );
    if let Some(lb) = report.final_lb {
        println!(
            "  final lower bound {lb:.6} after {} iterations",
            report.iterations_run
        );
    }
    if let Some(c) = &report.chain {
        println!(
            "  acceptance rate {:.3}, {} draws kept",
            c.acceptance_rate, c.kept
        );
    }
    for p in &report.posterior {
        println!(
            "  {:>8}  mean {:>10.5}  sd {:>9.5}  99% [{:.4}, {:.4}]",
            p.name,
            p.natural_mean,
            p.natural_sd,
            p.natural_interval_99[0],
            p.natural_interval_99[1]
        );
    }
    println!(
        "  {} simulations; outputs in {}",
        report.budget.total_simulations,
        out_dir.display()
    );
    Ok(())
}

fn compare(paths: &[PathBuf], delta: f64, json: bool) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| RunReport::from_path(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = compare_reports(&reports, delta)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.render());
    }
    Ok(())
}

fn validate(cli: &Cli, path: &Path) -> Result<()> {
    let config = load_config(path, cli.seed)?;
    let model = config.build_model()?;
    config.initial_moments(model.as_ref())?;
    println!(
        "{}: ok ({} on {}, {} parameters, {} summaries)",
        path.display(),
        config.estimator,
        model.name(),
        model.param_dim(),
        model.summary_dim()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Compare {
            reports,
            delta,
            json,
        } => compare(reports, *delta, *json),
        Command::Validate { config } => validate(&cli, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
