use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
cluster_size = 8
k = 4
m = 2
block_size = 65536
tick_us = 1000
parity_log_budget = 262144
plr_reserved = 65536
cord_buffer = 131072
stripes_per_volume = 16

[pools]
unit_capacity = 65536
min_units = 2
max_units = 4
pools_per_device = 2
"#;

fn ecbench(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecbench"));
    cmd.args(args).env_remove("ECBENCH_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("ecbench runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn counter(report: &Value, strategy: &str, name: &str) -> f64 {
    report["strategies"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["strategy"] == strategy)
        .unwrap_or_else(|| panic!("no {strategy}"))["counters"][name]
        .as_f64()
        .unwrap_or_else(|| panic!("no {name}"))
}

#[test]
fn empty_trace_gives_zero_report() {
    let (dir, cfg) = setup();
    let trace = dir.path().join("empty.csv");
    std::fs::write(&trace, "").unwrap();
    let out = ecbench(
        &["replay", "--config", cfg.to_str().unwrap(), "--strategy", "all", "--trace", trace.to_str().unwrap(), "--seed", "1", "--verify"],
        &[],
    );
    let rep: Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(rep["strategies"].as_array().unwrap().len(), 6);
    for s in rep["strategies"].as_array().unwrap() {
        assert_eq!(s["verified"], true);
        for (k, v) in s["counters"].as_object().unwrap() {
            assert_eq!(v.as_f64(), Some(0.0), "{} {k}", s["strategy"]);
        }
    }
}

#[test]
fn verified_synth_run_and_columns() {
    let (_dir, cfg) = setup();
    let out = ecbench(
        &["replay", "--config", cfg.to_str().unwrap(), "--strategy", "fo,tsue", "--synth", "msr", "--ops", "4000", "--seed", "7", "--verify"],
        &[],
    );
    let rep: Value = serde_json::from_str(&ok(&out)).unwrap();
    for s in ["fo", "tsue"] {
        for col in ["read_write_ops", "read_write_bytes", "overwrite_ops", "overwrite_bytes", "network_bytes"] {
            counter(&rep, s, col);
        }
    }
    assert!(counter(&rep, "tsue", "overwrite_ops") < counter(&rep, "fo", "overwrite_ops"));
    assert!(rep["strategies"].as_array().unwrap().iter().all(|s| s["verified"] == true));
}

#[test]
fn reports_are_deterministic() {
    let (_dir, cfg) = setup();
    let args = ["replay", "--config", cfg.to_str().unwrap(), "--strategy", "parix,cord", "--synth", "ten", "--ops", "2000", "--seed", "4"];
    assert_eq!(ok(&ecbench(&args, &[])), ok(&ecbench(&args, &[])));
}

#[test]
fn config_falls_back_to_env() {
    let (_dir, cfg) = setup();
    let out = ecbench(&["replay", "--strategy", "fo", "--synth", "ali", "--ops", "200"], &[("ECBENCH_CONFIG", &cfg)]);
    let rep: Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(rep["config"]["k"], 4);
    assert_eq!(rep["config"]["cluster_size"], 8);
}

#[test]
fn self_compare_is_unity_and_missing_is_na() {
    let (dir, cfg) = setup();
    let report = dir.path().join("r.json");
    ok(&ecbench(
        &["replay", "--config", cfg.to_str().unwrap(), "--strategy", "tsue", "--synth", "ten", "--ops", "1000", "--out", report.to_str().unwrap()],
        &[],
    ));
    let r = report.to_str().unwrap();
    let json: Value = serde_json::from_str(&ok(&ecbench(&["compare", r, r, "--format", "json"], &[]))).unwrap();
    for (k, v) in json["ratios"]["tsue"].as_object().unwrap() {
        if !v.is_null() {
            assert_eq!(v.as_f64(), Some(1.0), "{k}");
        }
    }
    let table = ok(&ecbench(&["compare", r, "--metrics", "overwrite_ops,no_such_counter"], &[]));
    assert!(table.contains("1.000") && table.contains("n/a"), "{table}");
}

/// Eight non-adjacent 4 KiB pieces in the first block of each stripe,
/// each written once and then updated once.
fn disjoint_trace(path: &Path) -> u64 {
    let mut lines = String::new();
    let mut n = 0;
    for pass in 0..2 {
        for stripe in 0..16u64 {
            for i in 0..8u64 {
                let off = stripe * 4 * 65536 + i * 8192;
                lines.push_str(&format!("{},v,{off},4096,W\n", pass * 1000 + n));
                n += 1;
            }
        }
    }
    std::fs::write(path, lines).unwrap();
    n / 2
}

#[test]
fn disjoint_overwrite_ratio_matches_census() {
    let (dir, cfg) = setup();
    let trace = dir.path().join("disjoint.csv");
    let n = disjoint_trace(&trace) as f64;
    let report = dir.path().join("r.json");
    ok(&ecbench(
        &[
            "replay", "--config", cfg.to_str().unwrap(), "--strategy", "fo,tsue", "--trace", trace.to_str().unwrap(),
            "--seed", "1", "--verify", "--out", report.to_str().unwrap(),
        ],
        &[],
    ));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    // One data and m = 2 parity overwrites per update for both.
    assert_eq!(counter(&rep, "fo", "overwrite_ops"), n * 3.0);
    assert_eq!(counter(&rep, "tsue", "overwrite_ops"), n * 3.0);
    let cmp: Value = serde_json::from_str(&ok(&ecbench(
        &["compare", report.to_str().unwrap(), "--metrics", "overwrite_ops", "--format", "json"],
        &[],
    )))
    .unwrap();
    assert_eq!(cmp["ratios"]["fo"]["overwrite_ops"].as_f64(), Some(1.0));
}

#[test]
fn gen_trace_round_trips_through_gzip() {
    let (dir, cfg) = setup();
    let trace = dir.path().join("t.csv.gz");
    ok(&ecbench(&["gen-trace", "--profile", "ten", "--ops", "500", "--seed", "2", "--out", trace.to_str().unwrap()], &[]));
    let from_file = ok(&ecbench(
        &["replay", "--config", cfg.to_str().unwrap(), "--strategy", "pl", "--trace", trace.to_str().unwrap(), "--seed", "2"],
        &[],
    ));
    let from_synth = ok(&ecbench(
        &["replay", "--config", cfg.to_str().unwrap(), "--strategy", "pl", "--synth", "ten", "--ops", "500", "--seed", "2"],
        &[],
    ));
    let a: Value = serde_json::from_str(&from_file).unwrap();
    let b: Value = serde_json::from_str(&from_synth).unwrap();
    assert_eq!(a["strategies"], b["strategies"]);
}

#[test]
fn errors_exit_nonzero() {
    let (dir, cfg) = setup();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "k = 0").unwrap();
    let out = ecbench(&["replay", "--config", bad.to_str().unwrap(), "--strategy", "fo", "--synth", "ten", "--ops", "10"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = ecbench(&["replay", "--config", cfg.to_str().unwrap(), "--strategy", "fl", "--synth", "ten", "--ops", "10"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown strategy"));
    let trace = dir.path().join("broken.csv");
    std::fs::write(&trace, "0,v,0,4096,W\nx,,,-1,Z\n").unwrap();
    let out = ecbench(&["replay", "--strategy", "fo", "--trace", trace.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&out.stderr));
    // A verified run needs an explicit seed.
    let out = ecbench(&["replay", "--strategy", "fo", "--synth", "ten", "--verify"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
