use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn conemkt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conemkt"))
        .args(args)
        .current_dir(dir)
        .env_remove("CONEMKT_TOL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Last stderr line of a failing run, parsed.
fn reason(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(err.lines().last().expect("reason line")).expect("JSON reason")
}

fn gen(dir: &Path, name: &str, kind: &str, seed: u64, d: usize) -> PathBuf {
    let o = conemkt(
        &["gen", "--seed", &seed.to_string(), "--kind", kind, "--d", &d.to_string(), "--T", "1", "--branching", "2", "--out", name],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(name)
}

#[test]
fn gen_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a.json", "roundtrip", 1, 2);
    gen(dir.path(), "b.json", "roundtrip", 1, 2);
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(code(&conemkt(&["validate", "a.json"], dir.path())), 0);
    let o = conemkt(&["gen", "--seed", "1", "--kind", "arbitrage", "--d", "1", "--T", "1", "--branching", "2"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_reports_triangle_locations_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "a.json", "roundtrip", 2, 3);
    let mut bundle: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    bundle["bid_ask"][0]["pi"][0][1] = Value::from(1e3);
    fs::write(&path, bundle.to_string()).unwrap();
    let o = conemkt(&["validate", "a.json", "--json"], dir.path());
    assert_eq!(code(&o), 1);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let hit = report["violations"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v["rule"] == "triangle" && v["location"].as_str().unwrap().starts_with("node r (0,1,"));
    assert!(hit, "{report}");
    assert_eq!(reason(&o)["exit"], 1);

    fs::write(dir.path().join("bad.json"), "{\"tree\": ").unwrap();
    let o = conemkt(&["validate", "bad.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(reason(&o)["reason"], "parse");
}

#[test]
fn check_modes_follow_construction() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rt.json", "roundtrip", 3, 2);
    assert_eq!(code(&conemkt(&["check", "rt.json", "--mode", "nar"], dir.path())), 0);
    assert!(dir.path().join("rt.prices.json").exists());

    gen(dir.path(), "ar.json", "arbitrage", 3, 2);
    let o = conemkt(&["check", "ar.json", "--mode", "na"], dir.path());
    assert_eq!(code(&o), 3);
    assert_eq!(reason(&o)["reason"], "na-fails");
    let cert: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ar.na-certificate.json")).unwrap()).unwrap();
    assert!(!cert["plan"].as_array().unwrap().is_empty());

    gen(dir.path(), "bd.json", "boundary", 3, 2);
    assert_eq!(code(&conemkt(&["check", "bd.json", "--mode", "na"], dir.path())), 0);
    assert_eq!(code(&conemkt(&["check", "bd.json", "--mode", "nar"], dir.path())), 3);
}

#[test]
fn maximize_price_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rt.json", "roundtrip", 4, 2);
    assert_eq!(code(&conemkt(&["maximize", "rt.json", "--lambda", "0.5,0.5"], dir.path())), 0);
    let o = conemkt(&["price", "rt.json", "rt.solution.json", "--strict", "--theta", "0.5", "--delta", "1e-3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rt.price-report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["verdict"], "strictly_consistent");

    let path = dir.path().join("rt.solution.json");
    let mut sol: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    sol["utilities"][0] = Value::from(0.99);
    fs::write(&path, sol.to_string()).unwrap();
    let o = conemkt(&["price", "rt.json", "rt.solution.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(reason(&o)["reason"], "digest-mismatch");

    let o = conemkt(&["maximize", "rt.json", "--lambda", "0,1"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(reason(&o)["reason"], "bad-weights");
}

#[test]
fn floor_miss_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rt.json", "roundtrip", 5, 2);
    // Nearly all weight on asset 1: the maximiser converts asset 2 away.
    assert_eq!(code(&conemkt(&["maximize", "rt.json", "--lambda", "1,0.0001"], dir.path())), 0);
    let o = conemkt(&["price", "rt.json", "rt.solution.json", "--delta", "1e-3"], dir.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(reason(&o)["reason"], "precondition-unmet");
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rt.price-report.json")).unwrap()).unwrap();
    assert!(!report["report"]["floor"]["violations"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_writes_non_dominating_frontier() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rt.json", "roundtrip", 6, 2);
    assert_eq!(code(&conemkt(&["maximize", "rt.json", "--sweep", "5", "--csv", "front.csv"], dir.path())), 0);
    let points: Vec<Vec<f64>> = (0..5)
        .map(|k| {
            let s: Value =
                serde_json::from_str(&fs::read_to_string(dir.path().join(format!("rt.solution.{k}.json"))).unwrap()).unwrap();
            s["utilities"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
        })
        .collect();
    for a in &points {
        for b in &points {
            assert!(!conemkt::pareto::dominates(a, b, 1e-6), "{a:?} dominates {b:?}");
        }
    }
    let csv = fs::read_to_string(dir.path().join("front.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn maximize_refuses_under_arbitrage() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "ar.json", "arbitrage", 7, 2);
    let o = conemkt(&["maximize", "ar.json", "--lambda", "1,1"], dir.path());
    assert_eq!(code(&o), 3);
    let gains = reason(&o)["detail"]["gains"].as_array().unwrap().iter().map(|g| g.as_f64().unwrap()).collect::<Vec<_>>();
    assert!(gains.iter().all(|g| *g >= -1e-12) && gains.iter().any(|g| *g >= 1e-9));
}

#[test]
fn equivalence_records_are_append_only() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["equivalence", "--seeds", "0..7", "--d", "2", "--T", "1", "--branching", "2", "--out-dir", "runs"];
    assert_eq!(code(&conemkt(&args, dir.path())), 0);
    assert_eq!(code(&conemkt(&args, dir.path())), 0);
    let runs = dir.path().join("runs");
    assert!(runs.join("equivalence-0-7.json").exists() && runs.join("equivalence-0-7.1.json").exists());
    let o = conemkt(&["equivalence", "--seeds", "0..3", "--d", "9", "--T", "1", "--branching", "2"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn tolerance_environment_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rt.json", "roundtrip", 8, 2);
    let o = Command::new(env!("CARGO_BIN_EXE_conemkt"))
        .args(["check", "rt.json", "--mode", "na"])
        .current_dir(dir.path())
        .env("CONEMKT_TOL", "nonsense")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(reason(&o)["reason"], "bad-tolerances");
    // A huge strictness threshold makes NA^r fail.
    let o = Command::new(env!("CARGO_BIN_EXE_conemkt"))
        .args(["check", "rt.json", "--mode", "nar"])
        .current_dir(dir.path())
        .env("CONEMKT_TOL", "strict_margin=10")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}
