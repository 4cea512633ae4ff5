use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOY: &str = r#"
name = "toy"
seed = 4
estimator = "vbsl"
samples = 30
iterations = 15
step_rule = { kind = "fixed", a = 5.0 }
particles = { kind = "fixed", n = 20 }
model = { kind = "normal", zeros = 4 }
"#;

fn vbsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbsl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_into(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = vbsl(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn same_seed_gives_identical_files_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.toml", TOY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run_into(&cfg, &a, &["--threads", "1"]);
    run_into(&cfg, &b, &["--threads", "1"]);
    run_into(&cfg, &c, &["--threads", "3"]);
    for f in ["trace.csv", "report.json", "density_theta.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
        assert_eq!(read(a.join(f)), read(c.join(f)), "{f}");
    }
    let d = dir.path().join("d");
    run_into(&cfg, &d, &["--seed", "5"]);
    assert_ne!(read(a.join("trace.csv")), read(d.join("trace.csv")));
}

#[test]
fn outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.toml", TOY);
    let out = dir.path().join("out");
    run_into(&cfg, &out, &[]);
    let report: serde_json::Value = serde_json::from_slice(&read(out.join("report.json"))).unwrap();
    let trace = String::from_utf8(read(out.join("trace.csv"))).unwrap();
    let rows: Vec<Vec<&str>> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 16);
    let last_cumulative: u64 = rows.last().unwrap()[4].parse().unwrap();
    let per_row: u64 = rows.iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
    assert_eq!(
        report["budget"]["total_simulations"].as_u64(),
        Some(last_cumulative)
    );
    assert_eq!(per_row, last_cumulative);
    // 16 batches of 30 draws, 20 particles each.
    assert_eq!(last_cumulative, 16 * 30 * 20);
    assert_eq!(
        report["config"]["output"]["grid_points"].as_u64(),
        Some(512)
    );
    let grid = String::from_utf8(read(out.join("density_theta.txt"))).unwrap();
    let pts: Vec<(f64, f64)> = grid
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(pts.len(), 512);
    let area: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[1].1 + w[0].1))
        .sum();
    assert!((area - 1.0).abs() < 1e-6, "{area}");
}

#[test]
fn unknown_estimator_is_reported_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &TOY.replace("\"vbsl\"", "\"mcmc\""));
    for cmd in ["run", "validate"] {
        let o = vbsl(&[
            cmd,
            cfg.to_str().unwrap(),
            "--out-dir",
            dir.path().join("x").to_str().unwrap(),
        ]);
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("`estimator`"), "{err}");
    }
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = vbsl(&["validate", p.to_str().unwrap()]);
            assert!(
                o.status.success(),
                "{}: {}",
                p.display(),
                String::from_utf8_lossy(&o.stderr)
            );
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn compare_needs_matching_reports() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.toml", TOY);
    let toy2 = write(
        dir.path(),
        "toy2.toml",
        &TOY.replace("name = \"toy\"", "name = \"toy-n40\"")
            .replace("n = 20", "n = 40"),
    );
    let other = write(
        dir.path(),
        "other.toml",
        &TOY.replace("name = \"toy\"", "name = \"five\"")
            .replace("zeros = 4", "zeros = 5"),
    );
    for (cfg, out) in [(&toy, "a"), (&toy2, "b"), (&other, "c")] {
        run_into(cfg, &dir.path().join(out), &[]);
    }
    let report = |d: &str| {
        dir.path()
            .join(d)
            .join("report.json")
            .to_str()
            .unwrap()
            .to_string()
    };

    let one = vbsl(&["compare", &report("a")]);
    assert!(!one.status.success());
    assert!(String::from_utf8_lossy(&one.stderr).contains("at least two"));

    let mismatched = vbsl(&["compare", &report("a"), &report("c")]);
    assert!(!mismatched.status.success());
    assert!(String::from_utf8_lossy(&mismatched.stderr).contains("mismatched models"));

    let ok = vbsl(&["compare", &report("a"), &report("b")]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let table = String::from_utf8_lossy(&ok.stdout);
    assert!(
        table.contains("toy-n40") && table.contains("theta_mean"),
        "{table}"
    );

    let json = vbsl(&["compare", &report("a"), &report("b"), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn pseudo_marginal_run_writes_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "pm.toml",
        r#"
estimator = "pm-mh"
iterations = 300
particles = { kind = "fixed", n = 20 }
model = { kind = "normal", observations = [0.3, -0.1, 0.2] }
pm_mh = { proposal_variance = [0.4], burn_in = 50 }
"#,
    );
    let out = dir.path().join("pm");
    run_into(&cfg, &out, &[]);
    let chain = String::from_utf8(read(out.join("chain.csv"))).unwrap();
    assert_eq!(
        chain.lines().next(),
        Some("iteration,theta,log_like,log_prior")
    );
    assert_eq!(chain.lines().count(), 301);
    let report: serde_json::Value = serde_json::from_slice(&read(out.join("report.json"))).unwrap();
    assert_eq!(report["chain"]["kept"].as_u64(), Some(250));
}
