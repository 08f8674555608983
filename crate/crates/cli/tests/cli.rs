//! End-to-end runs of the binary on small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn quick() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quick.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collective")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

/// Data rows of a stamped csv, keyed by header.
fn read_csv(dir: &Path, name: &str) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(dir.join(name)).unwrap();
    let (stamp, body) = text.split_once('\n').unwrap();
    assert!(stamp.starts_with("# config_sha256="), "{stamp}");
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records().map(|rec| headers.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect()).collect()
}

/// Writes a variant of the quick config with `edit` applied.
fn variant(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(quick()).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join("variant.json");
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn missing_field_exits_nonzero_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), |v| {
        v["funds"][0].as_object_mut().unwrap().remove("budget");
    });
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("budget") && e.contains("funds[0]"), "{e}");
}

#[test]
fn unknown_suite_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["verify", "nonsense", "--config", quick().to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown suite"), "{}", stderr(&o));
}

#[test]
fn solve_cross_checks_log_fund() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--config", quick().to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = read_json(tmp.path(), "solve.json");
    assert_eq!(j["config_sha256"].as_str().unwrap().len(), 64);
    let log = &j["funds"][0];
    assert!(log["relative_disagreement"].as_f64().unwrap() < 1e-6, "{log}");
    let finite: Vec<f64> = log["finite"].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).collect();
    assert!(finite.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{finite:?}");
    assert!(!read_csv(tmp.path(), "solve_values.csv").is_empty());
}

#[test]
fn zero_strategy_keeps_discounted_wealth_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--config", quick().to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--strategy", "zero", "--trials", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(tmp.path(), "simulate_trajectories.csv");
    assert!(!rows.is_empty());
    for r in &rows {
        let d: f64 = r["discounted_pre"].parse().unwrap();
        assert!((d - 6.0).abs() < 1e-9, "{r:?}");
    }
    assert_eq!(read_json(tmp.path(), "simulate.json")["admissibility_rate"].as_f64(), Some(1.0));
}

#[test]
fn annuity_exhausts_wealth_without_interest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), |v| {
        v["market"]["rate"] = 0.0.into();
        v["market"]["assets"][0]["drift"] = 0.0.into();
    });
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap(), "--strategy", "annuity", "--trials", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = read_json(&tmp.path().join("o"), "simulate.json");
    assert!(j["terminal_max"].as_f64().unwrap().abs() < 1e-9, "{j}");
    assert!(j["terminal_min"].as_f64().unwrap().abs() < 1e-9, "{j}");
    assert_eq!(j["admissibility_rate"].as_f64(), Some(1.0));
}

#[test]
fn transfer_is_admissible_at_size_100() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate", "--config", quick().to_str().unwrap(), "--out", tmp.path().to_str().unwrap(),
        "--strategy", "transfer", "--fund", "2", "--size", "100",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = read_json(tmp.path(), "simulate.json");
    assert_eq!(j["admissibility_rate"].as_f64(), Some(1.0), "{j}");
}

#[test]
fn missing_strategy_file_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let o = run(&["simulate", "--config", quick().to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--strategy-file", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.json"), "{}", stderr(&o));
}

#[test]
fn strategy_file_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s.json");
    fs::write(&s, r#"{ "consumption": [0.5, 0.5, 0.5, 0.5, 0.5, 0.5], "risky_fraction": 0.3 }"#).unwrap();
    let o = run(&["simulate", "--config", quick().to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap(), "--strategy-file", s.to_str().unwrap(), "--trials", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&tmp.path().join("o"), "simulate.json")["paths"].as_u64(), Some(100));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for k in 0..2 {
        let d = tmp.path().join(format!("r{k}"));
        let o = run(&["simulate", "--config", quick().to_str().unwrap(), "--out", d.to_str().unwrap(), "--strategy", "optimal", "--size", "4", "--seed", "11", "--trials", "200"]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push((fs::read(d.join("simulate.json")).unwrap(), fs::read(d.join("simulate_trajectories.csv")).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
    let j: Value = serde_json::from_slice(&outs[0].0).unwrap();
    assert_eq!(j["seed"].as_u64(), Some(11));
}

#[test]
fn pro_rata_pool_fails_the_audit() {
    let tmp = tempfile::tempdir().unwrap();
    // A wide budget gap so pooling visibly shortchanges the richer type.
    let cfg = variant(tmp.path(), |v| {
        v["population"]["types"][1]["budget"] = 2.0.into();
    });
    let o = run(&["audit-scheme", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--scheme", "pro-rata-pool"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let j = read_json(tmp.path(), "audit_scheme.json");
    assert_eq!(j["passed"].as_bool(), Some(false));
    let basic = run(&["audit-scheme", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert!(basic.status.success(), "{}", stderr(&basic));
}

#[test]
fn quick_suites_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for s in ["monotone", "annuity", "market"] {
        let o = run(&["verify", s, "--config", quick().to_str().unwrap(), "--out", tmp.path().join(s).to_str().unwrap()]);
        assert!(o.status.success(), "{s}: {}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(read_json(&tmp.path().join(s), "verify.json")["passed"].as_bool(), Some(true));
    }
}
