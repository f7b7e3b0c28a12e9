use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const ANALYTIC: &str = "\
beta = 2
varpi = 1.6
utility.kind = cara
utility.alpha = 1
weighting.kind = identity
loss.kind = uniform
loss.b = 1
";

const CRRA_POWER: &str = "\
beta = 2
varpi = 1.85
utility.kind = crra
utility.gamma = 2
weighting.kind = power
weighting.gamma = 2
loss.kind = mass
loss.q = 0.5
loss.b = 1
";

fn run(dir: &Path, config: &str, args: &[&str], env: &[(&str, &str)]) -> Output {
    let path = dir.join("run.cfg");
    fs::write(&path, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_contractsolve"));
    cmd.args(args).arg("--config").arg(&path).current_dir(dir);
    cmd.env_remove("CONTRACTSOLVE_MAX_ITERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_owned))
        .unwrap_or_else(|| panic!("no `{key}` in summary:\n{text}"))
}

#[test]
fn analytic_case_with_fixed_lambda() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = run(
        tmp.path(),
        ANALYTIC,
        &[
            "solve",
            "--lambda",
            "1",
            "--grid-n",
            "1025",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let q = rows(&out.join("quantile.csv"));
    assert_eq!(q.len(), 1025);
    for r in &q {
        let p: f64 = r[0].parse().unwrap();
        let qv: f64 = r[3].parse().unwrap();
        assert!((qv - (1.0 + p)).abs() <= 1e-6);
    }
    assert_eq!(summary_value(&out, "ic_verdict"), "compliant");
    assert_eq!(summary_value(&out, "lambda_source"), "override");
    let c = rows(&out.join("contract.csv"));
    for r in &c {
        let x: f64 = r[0].parse().unwrap();
        let (rv, iv): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert_eq!(rv + iv, x);
    }
}

#[test]
fn calibrated_solve_meets_the_budget() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), ANALYTIC, &["solve", "--grid-n", "257"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let budget: f64 = summary_value(&out, "budget").parse().unwrap();
    assert!((budget - 1.6).abs() <= 1e-7 * 2.6);
    assert_eq!(summary_value(&out, "lambda_source"), "calibrated");
    assert_eq!(
        summary_value(&out, "threshold").parse::<f64>().unwrap(),
        1.5
    );
}

#[test]
fn infeasible_budget_exits_with_2() {
    let tmp = TempDir::new().unwrap();
    let config = ANALYTIC.replace("varpi = 1.6", "varpi = 1.4");
    for mode in ["solve", "feasibility", "sweep", "oracle-check"] {
        let o = run(tmp.path(), &config, &[mode, "--grid-n", "65"], &[]);
        assert_eq!(o.status.code(), Some(2), "{mode}: {}", stderr(&o));
        assert!(stderr(&o).contains("threshold 1.5"), "{}", stderr(&o));
    }
}

#[test]
fn iteration_cap_exits_with_3() {
    let tmp = TempDir::new().unwrap();
    let args = ["solve", "--lambda", "1", "--grid-n", "2049"];
    let o = run(
        tmp.path(),
        CRRA_POWER,
        &args,
        &[("CONTRACTSOLVE_MAX_ITERS", "1")],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run(tmp.path(), CRRA_POWER, &args, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(
        tmp.path(),
        CRRA_POWER,
        &args,
        &[("CONTRACTSOLVE_MAX_ITERS", "many")],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("CONTRACTSOLVE_MAX_ITERS"));
}

#[test]
fn small_grid_layout() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        tmp.path(),
        &format!("{CRRA_POWER}grid.n = 9\n"),
        &["solve"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("out/quantile.csv")).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert_eq!(
        text.lines().next().unwrap(),
        "p,delta,delta_prime,Q,branch,hbar,phi_tilde"
    );
    for r in rows(&tmp.path().join("out/quantile.csv")) {
        assert!(["ODE", "OBST", "FLAT"].contains(&r[4].as_str()), "{}", r[4]);
        for (k, cell) in r.iter().enumerate().filter(|(k, _)| *k != 4) {
            // 17 significant digits
            let mantissa = cell.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.len(), 18, "column {k}: {cell}");
        }
    }
    let contract = fs::read_to_string(tmp.path().join("out/contract.csv")).unwrap();
    assert_eq!(contract.lines().next().unwrap(), "x,R,I");
    // on this grid the budget of Q ≡ β is below ϖ
    assert_eq!(
        summary_value(&tmp.path().join("out"), "lambda_source"),
        "slack"
    );

    let o = run(
        tmp.path(),
        &format!("{ANALYTIC}grid.n = 9\n"),
        &["solve"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let q = rows(&tmp.path().join("out/quantile.csv"));
    assert_eq!(q.len(), 9);
    assert!(q.iter().all(|r| r[4] == "ODE" || r[4] == "OBST"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let files = ["quantile.csv", "contract.csv", "summary.txt"];
    let mut first = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let o = run(
            tmp.path(),
            CRRA_POWER,
            &["solve", "--grid-n", "257", "--out", out.to_str().unwrap()],
            &[],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let bytes: Vec<Vec<u8>> = files
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        if k == 0 {
            first = bytes;
        } else {
            assert_eq!(first, bytes);
        }
    }
    let a = tmp.path().join("sweep0");
    let b = tmp.path().join("sweep1");
    for out in [&a, &b] {
        let o = run(
            tmp.path(),
            CRRA_POWER,
            &["sweep", "--grid-n", "129", "--out", out.to_str().unwrap()],
            &[],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(a.join("sweep.csv")).unwrap(),
        fs::read(b.join("sweep.csv")).unwrap()
    );
    assert_eq!(summary_value(&a, "budget_nonincreasing"), "true");
}

#[test]
fn config_errors() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        tmp.path(),
        &ANALYTIC.replace("beta = 2\n", ""),
        &["solve"],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("validation error: beta"),
        "{}",
        stderr(&o)
    );

    let o = run(
        tmp.path(),
        &format!("{ANALYTIC}grid.n = 4\n"),
        &["solve"],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("grid.n >= 9"), "{}", stderr(&o));

    let o = run(
        tmp.path(),
        &format!("{ANALYTIC}loss.b: 3\n"),
        &["solve"],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("parse error at line 8"),
        "{}",
        stderr(&o)
    );

    let o = run(tmp.path(), ANALYTIC, &["nonsense"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_check_agrees() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        tmp.path(),
        CRRA_POWER,
        &["oracle-check", "--grid-n", "257"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let sup: f64 = summary_value(&out, "projected_sup_norm").parse().unwrap();
    assert!(sup <= 5e-3, "{sup}");
    let gap: f64 = summary_value(&out, "exhaustive_sup_norm").parse().unwrap();
    let level: f64 = summary_value(&out, "exhaustive_level").parse().unwrap();
    assert!(gap <= level, "{gap} vs {level}");
    assert_eq!(rows(&out.join("oracle.csv")).len(), 257);
}

#[test]
fn feasibility_at_the_threshold() {
    let tmp = TempDir::new().unwrap();
    let config = ANALYTIC.replace("varpi = 1.6", "varpi = 1.5");
    let o = run(tmp.path(), &config, &["feasibility", "--grid-n", "65"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        summary_value(&tmp.path().join("out"), "classification"),
        "unique"
    );

    let o = run(tmp.path(), &config, &["solve", "--grid-n", "65"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for r in rows(&tmp.path().join("out/quantile.csv")) {
        let p: f64 = r[0].parse().unwrap();
        let q: f64 = r[3].parse().unwrap();
        assert!((q - (1.0 + p)).abs() <= 1e-14);
    }
}

#[test]
fn envelope_mode() {
    let tmp = TempDir::new().unwrap();
    let values: Vec<String> = (0..33)
        .map(|i| format!("{}", (i as f64 / 32.0).powi(2)))
        .collect();
    let config = format!("envelope.values = [{}]\n", values.join(", "));
    let o = run(tmp.path(), &config, &["envelope"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for r in rows(&tmp.path().join("out/envelope.csv")) {
        let p: f64 = r[0].parse().unwrap();
        let e: f64 = r[2].parse().unwrap();
        assert!((e - p).abs() <= 1e-12);
    }
}
