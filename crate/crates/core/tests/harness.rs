use vbsl::harness::{compare_reports, run_experiment, write_outputs};
use vbsl::models::normal::{exact_posterior, lb_vbsl};
use vbsl::{RunConfig, RunReport};

fn toy(extra: &str) -> RunConfig {
    RunConfig::from_toml(&format!(
        r#"
seed = 3
samples = 40
iterations = 30
step_rule = {{ kind = "fixed", a = 5.0 }}
particles = {{ kind = "fixed", n = 30 }}
model = {{ kind = "normal", observations = [0.4, -0.2, 0.9, 0.1] }}
{extra}
"#
    ))
    .unwrap()
}

#[test]
fn report_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&toy("estimator = \"vbsl\"")).unwrap();
    let written = write_outputs(&out, dir.path()).unwrap();
    let read = RunReport::from_path(&dir.path().join("report.json")).unwrap();
    assert_eq!(written, read);
    assert_eq!(read.lb_trace.len(), 31);
    assert_eq!(read.files.densities.len(), 1);
    assert!(dir.path().join(&read.files.densities[0]).exists());
}

#[test]
fn exact_likelihood_run_matches_conjugate_posterior() {
    let mut c = toy("estimator = \"exact\"");
    c.samples = 200;
    c.iterations = 100;
    let out = run_experiment(&c).unwrap();
    let y = [0.4, -0.2, 0.9, 0.1];
    let (m, v) = exact_posterior(4, y.iter().sum::<f64>() / 4.0);
    let r = &out.report;
    assert!(
        (r.working.mean[0] - m).abs() < 0.03,
        "{} vs {m}",
        r.working.mean[0]
    );
    assert!((r.working.covariance[0][0] / v - 1.0).abs() < 0.1);
    // With the exact likelihood the synthetic-likelihood bound is attained.
    assert!((r.final_lb.unwrap() - lb_vbsl(&y)).abs() < 0.02);
    assert_eq!(r.budget.total_simulations, 0);
}

#[test]
fn compare_ranks_runs_on_the_same_data() {
    let a = run_experiment(&toy("estimator = \"vbsl\"\nname = \"a\""))
        .unwrap()
        .report;
    let b = run_experiment(&toy("estimator = \"exact\"\nname = \"b\""))
        .unwrap()
        .report;
    let table = compare_reports(&[a.clone(), b], 1.0).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.iterations_to_within.is_some()));
    assert!(table.render().lines().count() == 4);
    assert!(compare_reports(&[a.clone(), a], -1.0).is_err());
}

#[test]
fn stable_and_gandk_runs_report_natural_scale() {
    let stable = RunConfig::from_toml(
        r#"
estimator = "vbsl"
parametrization = "cholesky"
samples = 10
iterations = 3
particles = { kind = "fixed", n = 20 }
initial = { natural_mean = [1.5, 0.5, 1.0, 0.0], variance = [0.04, 0.04, 0.04, 0.04] }
model = { kind = "alpha_stable", synthetic = { alpha = 1.5, beta = 0.5, gamma = 1.0, delta = 0.0, n = 100 } }
"#,
    )
    .unwrap();
    let r = run_experiment(&stable).unwrap().report;
    assert_eq!(r.param_names, ["alpha", "beta", "gamma", "delta"]);
    let alpha = &r.posterior[0];
    assert!(1.1 < alpha.natural_interval_99[0] && alpha.natural_interval_99[1] < 2.0);
    assert!(r.posterior[2].natural_interval_99[0] > 0.0);

    let gandk = RunConfig::from_toml(
        r#"
estimator = "vbsl"
parametrization = "cholesky"
samples = 10
iterations = 2
step_rule = { kind = "adadelta" }
particles = { kind = "fixed", n = 40 }
model = { kind = "gandk", synthetic = { margins = [[0.0, 0.01, 0.1, 0.1], [0.01, 0.02, -0.2, 0.0]], w = [0.7], n = 200 } }
"#,
    )
    .unwrap();
    let out = run_experiment(&gandk).unwrap();
    assert_eq!(out.report.param_names.len(), 9);
    assert_eq!(out.densities.len(), 9);
    assert!(out.report.rho_trace.iter().skip(1).all(|r| *r == 1.0));
}
