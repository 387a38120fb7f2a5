use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = r#"{
    "L": 1.0, "N": 32, "n": 2.5, "p": 4.0, "epsilon": 1e-3, "delta": 0.1,
    "S": {"mode": "factor-above-A3star", "factor": 2.0},
    "noise": {"mode": "power-decay", "amplitude": 0.2, "decay": 3.0, "K": 4},
    "dt0": 1e-4, "T": 2e-3,
    "initial": {"kind": "perturbed-constant", "height": 1.0, "amplitude": 0.3},
    "ensemble": {"count": 4},
    "inequalities": {"samples": 5, "grids": [64, 128]}
}"#;

fn stfe(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("c.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_stfe"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = stfe(tmp.path(), BASE, &["simulate", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["series_0.csv", "summary.json", "resolved_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("series_0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time,mass,energy,energy_eps,entropy,alpha_entropy,dissipation,min_u,max_u,support_length"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 10);
    let mantissa = row[1].split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17);
    assert_eq!(csv.lines().count(), 1 + 21);
}

#[test]
fn different_seed_changes_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    stfe(tmp.path(), BASE, &["simulate", "--seed", "1", "--out", a.to_str().unwrap()]);
    stfe(tmp.path(), BASE, &["simulate", "--seed", "2", "--out", b.to_str().unwrap()]);
    assert_ne!(
        fs::read(a.join("series_0.csv")).unwrap(),
        fs::read(b.join("series_0.csv")).unwrap()
    );
}

#[test]
fn missing_key_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BASE.replace(r#""n": 2.5,"#, "");
    let o = stfe(tmp.path(), &cfg, &["simulate", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`n`"));
}

#[test]
fn unknown_key_and_bad_values_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let unknown = BASE.replace(r#""dt0""#, r#""dtt": 1, "dt0""#);
    let o = stfe(tmp.path(), &unknown, &["simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dtt"));
    let bad_n = BASE.replace(r#""n": 2.5"#, r#""n": 3.5"#);
    let o = stfe(tmp.path(), &bad_n, &["simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_3_and_keeps_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = BASE
        .replace(r#""amplitude": 0.2"#, r#""amplitude": 40.0"#)
        .replace(r#""delta": 0.1"#, r#""delta": 0.0"#)
        .replace(r#""amplitude": 0.3"#, r#""amplitude": 0.95"#)
        .replace(r#""dt0": 1e-4"#, r#""dt0": 1e-3, "solver": {"dt_min": 1e-3}"#)
        .replace(r#""T": 2e-3"#, r#""T": 0.5"#);
    let o = stfe(tmp.path(), &cfg, &["simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("resolved_config.json").exists());
    let csv = fs::read_to_string(out.join("series_0.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert_eq!(json(&out.join("summary.json"))["status"], "failed");
}

#[test]
fn inequalities_report_has_required_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = stfe(tmp.path(), BASE, &["inequalities", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("summary.json"));
    for key in ["bernis_ratios", "onb_max_dev", "positivity_constants"] {
        assert!(r.get(key).is_some(), "{key}");
    }
}

#[test]
fn ensemble_output_is_independent_of_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = stfe(
            tmp.path(),
            BASE,
            &["ensemble", "--seed", "3", "--threads", threads, "--out", out.to_str().unwrap()],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["summary.json", "series_0.csv", "series_3.csv", "resolved_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resolved_config_reparses_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    stfe(tmp.path(), BASE, &["simulate", "--seed", "5", "--out", a.to_str().unwrap()]);
    let resolved = fs::read_to_string(a.join("resolved_config.json")).unwrap();
    let o = stfe(tmp.path(), &resolved, &["simulate", "--seed", "5", "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(a.join("series_0.csv")).unwrap(),
        fs::read(b.join("series_0.csv")).unwrap()
    );
}

#[test]
fn every_subcommand_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BASE.replace(
        r#""ensemble": {"count": 4}"#,
        r#""ensemble": {"count": 2}, "sweep": {"axis": "eps", "values": [1e-2, 1e-3]},
           "convergence": {"levels": [[32, 1e-3], [32, 5e-4], [32, 2.5e-4]], "reference_dt": 1e-5}"#,
    );
    for cmd in ["simulate", "ensemble", "sweep", "budget", "qv-test", "inequalities", "convergence"] {
        let out = tmp.path().join(cmd);
        let o = stfe(tmp.path(), &cfg, &[cmd, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let s = json(&out.join("summary.json"));
        assert_eq!(s["command"], cmd);
    }
    let conv = json(&tmp.path().join("convergence/summary.json"));
    assert_eq!(conv["study"], "temporal");
    let budget = json(&tmp.path().join("budget/summary.json"));
    assert_eq!(budget["mean_residual"][0], 0.0);
}
