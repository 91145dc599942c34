use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_rg-tori"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (output, out)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let (o, _) = run(tmp.path(), "[model]\npreset = \"nope\"\n", &[]);
    assert_eq!(code(&o), 2);
    let (o, _) = run(tmp.path(), "[model]\npreset = \"single_mode\"\n[run]\nunknown_key = 1\n", &[]);
    assert_eq!(code(&o), 2);
    let (o, _) = run(tmp.path(), "[model]\npreset = \"single_mode\"\n", &["--workers", "0"]);
    assert_eq!(code(&o), 2);
    let missing = Command::new(env!("CARGO_BIN_EXE_rg-tori"))
        .args(["--config", tmp.path().join("absent.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&missing), 2);
}

#[test]
fn budget_exhaustion_exits_with_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[run]\nmode = \"trees\"\n[model]\npreset = \"two_mode_generic\"\n[truncation]\nmax_order = 4\nmax_count = 5\n";
    let (o, out) = run(tmp.path(), cfg, &[]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("report.json").exists());
}

#[test]
fn failed_checks_exit_with_3_only_when_strict() {
    let tmp = TempDir::new().unwrap();
    // an unattainable ODE bound makes one verification check fail
    let cfg = r#"
[run]
mode = "verify"
eps_grid = [2e-3, 4e-3, 8e-3]

[model]
preset = "two_mode_benchmark"

[truncation]
max_order = 3
p_max = 1

[oracle]
ode_bound = 1e-30
horizon = 50.0
"#;
    let (o, out) = run(tmp.path(), cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(&out);
    assert_eq!(rep["results"]["failed_checks"], serde_json::json!(["ode_residual"]));
    let verify = std::fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(verify.lines().any(|l| l.starts_with("ode_residual,") && l.ends_with(",false")));

    let (o, _) = run(tmp.path(), cfg, &["--strict"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn each_mode_writes_its_tables() {
    let cases: [(&str, &str, &[&str]); 5] = [
        ("bryuno", "[model]\npreset = \"single_mode\"\n[truncation]\nm_max = 8\n", &["alpha.csv", "scales.csv"]),
        ("trees", "[model]\npreset = \"single_mode\"\n[truncation]\nmax_order = 3\n", &["trees.csv"]),
        (
            "selfenergy",
            "[run]\nbeta0 = [0.4]\nsamples = 4\n[model]\npreset = \"single_mode\"\n[truncation]\nmax_order = 3\n",
            &["selfenergy.csv"],
        ),
        (
            "expand",
            "[run]\nbeta0 = [0.4]\n[model]\npreset = \"single_mode\"\n[truncation]\nmax_order = 3\n",
            &["coefficients.csv"],
        ),
        (
            "solve",
            "[run]\neps = 1e-2\n[model]\npreset = \"cosine_rotator\"\n[truncation]\nmax_order = 3\np_max = 1\n",
            &["lgrid.csv", "coefficients.csv"],
        ),
    ];
    for (mode, cfg, files) in cases {
        let tmp = TempDir::new().unwrap();
        let (o, out) = run(tmp.path(), cfg, &["--mode", mode]);
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let rep = report(&out);
        assert_eq!(rep["mode"], mode);
        let listed: Vec<&str> = rep["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
        for f in files {
            assert!(out.join(f).exists(), "{mode}: missing {f}");
            assert!(listed.contains(f), "{mode}: {f} not in report");
        }
    }
}

#[test]
fn solve_finds_the_cosine_rotator_fixed_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[run]\nmode = \"solve\"\neps = 1e-2\n[model]\npreset = \"cosine_rotator\"\n[truncation]\nmax_order = 3\np_max = 1\n";
    let (o, out) = run(tmp.path(), cfg, &[]);
    assert_eq!(code(&o), 0);
    let rep = report(&out);
    let lp = &rep["results"]["locked_point"];
    assert!(lp["beta0_star"][0].as_f64().unwrap().abs() < 1e-12);
    assert!((lp["l_value"].as_f64().unwrap() - 1e-2).abs() < 1e-12);
    assert_eq!(rep["results"]["sup_norm"].as_f64().unwrap(), 0.0);
}

#[test]
fn outputs_do_not_depend_on_workers_or_repetition() {
    let cfg = "[run]\nmode = \"selfenergy\"\nbeta0 = [0.7, 1.3]\nseed = 3\n[model]\npreset = \"two_mode_generic\"\n[truncation]\nmax_order = 4\n";
    let mut tables = Vec::new();
    let mut hashes = Vec::new();
    for workers in ["1", "2", "1"] {
        let tmp = TempDir::new().unwrap();
        let (o, out) = run(tmp.path(), cfg, &["--workers", workers]);
        assert_eq!(code(&o), 0);
        tables.push(std::fs::read(out.join("selfenergy.csv")).unwrap());
        hashes.push(report(&out)["artifacts"][0]["sha256"].clone());
    }
    assert!(tables.windows(2).all(|w| w[0] == w[1]));
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}
