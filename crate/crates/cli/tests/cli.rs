//! End-to-end runs of the `switchjump` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_switchjump"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Every file except the manifest, by name.
fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

const OSCILLATOR_SIM: &str = r#"
experiment = "simulate"
seed = 5

[model]
name = "damped-oscillator"

[sim]
step = 0.01
horizon = 2.0
observe = [0.5, 1.5]

[simulate]
x0 = [0.0, 1.0]
k0 = 1
paths = 6
"#;

#[test]
fn list_models_is_stable() {
    let a = bin().arg("list-models").output().unwrap();
    let b = bin().arg("list-models").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "zero-everything",
            "pure-jump",
            "pure-switch",
            "state-independent-rates",
            "ou-no-switch",
            "damped-oscillator"
        ]
    );
    assert!(text.contains("m_bound: float = 0.5"));
}

#[test]
fn empty_config_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&write_config(dir.path(), ""), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment: missing"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validation_errors_name_the_config_path() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (OSCILLATOR_SIM.replace("k0 = 1", "k0 = 9"), "simulate.k0"),
        (OSCILLATOR_SIM.replace("x0 = [0.0, 1.0]", "x0 = [0.0]"), "simulate.x0"),
        (OSCILLATOR_SIM.replace("step = 0.01", "step = -0.01"), "sim:"),
        (OSCILLATOR_SIM.replace("horizon = 2.0", "horizon = 2.0\ncolour = 1"), "sim.colour"),
        (OSCILLATOR_SIM.replace("damped-oscillator", "nope"), "model.name"),
        (OSCILLATOR_SIM.replace("[simulate]", "[other]"), "other"),
        (
            OSCILLATOR_SIM.replace("name = \"damped-oscillator\"", "name = \"pure-jump\"\nregimes = 3"),
            "model.regimes",
        ),
    ];
    for (text, path) in cases {
        let o = run(&write_config(dir.path(), &text), &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(2), "{path}: {}", stderr(&o));
        assert!(stderr(&o).contains(path), "{path}: {}", stderr(&o));
    }
    let missing = "experiment = \"decay_fit\"\n[model]\nname = \"pure-jump\"\n";
    let o = run(&write_config(dir.path(), missing), &dir.path().join("out"), &[]);
    assert!(stderr(&o).contains("decay_fit: missing"), "{}", stderr(&o));
}

#[test]
fn zero_model_writes_constant_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
experiment = "simulate"
[model]
name = "zero-everything"
[sim]
step = 0.1
horizon = 1.0
record = "full_path"
[simulate]
x0 = [2.0, 0.0]
k0 = 1
"#;
    let out = dir.path().join("out");
    let o = run(&write_config(dir.path(), cfg), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("path_0000.csv")).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,x1,x2,regime,event_type"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert_eq!(&r[1..4], ["2", "0", "1"]);
    }
}

#[test]
fn reruns_are_byte_identical_and_hashed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), OSCILLATOR_SIM);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run(&cfg, &a, &["--workers", "1"]).status.success());
    assert!(run(&cfg, &b, &["--workers", "3"]).status.success());
    assert!(run(&cfg, &c, &["--seed", "6"]).status.success());
    let (fa, fb, fc) = (data_files(&a), data_files(&b), data_files(&c));
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);

    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(json(&c.join("manifest.json"))["seed"], 6);
    let listed = manifest["files"].as_array().unwrap();
    assert_eq!(listed.len(), fa.len());
    for f in listed {
        let name = f["path"].as_str().unwrap();
        let bytes = fs::read(a.join(name)).unwrap();
        use sha2::Digest;
        assert_eq!(f["sha256"], hex::encode(sha2::Sha256::digest(&bytes)));
    }
    // event log rows: start, events and observations in time order, final last
    let text = fs::read_to_string(a.join("path_0000.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows[0].ends_with(",start"));
    assert!(rows.last().unwrap().ends_with(",final"));
    assert_eq!(rows.iter().filter(|r| r.ends_with(",observe")).count(), 2);
    let times: Vec<f64> = rows.iter().map(|r| r.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn json_format_writes_keyed_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("format = \"json\"\n{OSCILLATOR_SIM}"));
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let finals = json(&out.join("finals.json"));
    assert_eq!(finals.as_array().unwrap().len(), 6);
    assert_eq!(finals[0]["event_type"], "final");
    assert_eq!(finals[0]["time"], 2.0);
}

#[test]
fn failed_acceptance_check_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
experiment = "construction_equivalence"
[model]
name = "damped-oscillator"
[sim]
step = 0.01
horizon = 2.0
[construction_equivalence]
x0 = [0.2, 0.5]
k0 = 0
samples = 200
check_times = [0.5, 1.0]
ks_max = 0.0
"#;
    let out = dir.path().join("out");
    let o = run(&write_config(dir.path(), cfg), &out, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["passed"], false);
    assert_eq!(summary["checks"][0]["name"], "ks_first_switch_time");
    assert_eq!(summary["checks"][0]["pass"], false);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn runtime_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = OSCILLATOR_SIM.replace("observe = [0.5, 1.5]", "explosion_guard = 0.5");
    let o = run(&write_config(dir.path(), &cfg), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("simulate: path"), "{}", stderr(&o));
}

#[test]
fn drift_check_needs_a_lyapunov_function() {
    let dir = TempDir::new().unwrap();
    let cfg = "experiment = \"drift_check\"\n[model]\nname = \"ou-no-switch\"\n[drift_check]\n";
    let o = run(&write_config(dir.path(), cfg), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.name"), "{}", stderr(&o));
}

#[test]
fn drift_check_on_the_oscillator_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = "experiment = \"drift_check\"\n[model]\nname = \"damped-oscillator\"\n[drift_check]\n";
    let out = dir.path().join("out");
    let o = run(&write_config(dir.path(), cfg), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["results"]["violations_outside_compact"], 0);
    assert_eq!(s["results"]["beta_fitted"], true);
}

#[test]
fn decay_fit_on_the_oscillator_reports_theta_below_one() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
experiment = "decay_fit"
seed = 11
[model]
name = "damped-oscillator"
[sim]
step = 0.02
horizon = 3.0
[decay_fit]
x0 = [0.0, 1.0]
k0 = 0
y0 = [0.0, -1.0]
l0 = 4
times = [1.0, 2.0, 3.0]
paths = 20000
"#;
    let out = dir.path().join("out");
    let o = run(&write_config(dir.path(), cfg), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert!(s["results"]["theta_fit"].as_f64().unwrap() < 1.0);
    let distances = fs::read_to_string(out.join("distances.csv")).unwrap();
    assert!(distances.starts_with("time,distance,stderr,noise_floor\n"));
    assert_eq!(distances.lines().count(), 4);
}

#[test]
fn every_experiment_runs_on_small_inputs() {
    let dir = TempDir::new().unwrap();
    let sections = [
        ("coupling_contraction", "x0 = [0.3, 0.4]\ny0 = [0.3, 0.8]\nk0 = 0\nruns = 500\nscales = [1.0, 0.5]"),
        ("is_identity", "x0 = [0.0, 0.5]\nk0 = 0\npaths = 500"),
    ];
    for (kind, body) in sections {
        let cfg = format!(
            "experiment = \"{kind}\"\n[model]\nname = \"damped-oscillator\"\n[sim]\nstep = 0.02\nhorizon = 0.5\n[{kind}]\n{body}\n"
        );
        let out = dir.path().join(kind);
        let o = run(&write_config(dir.path(), &cfg), &out, &[]);
        assert!(matches!(o.status.code(), Some(0) | Some(4)), "{kind}: {}", stderr(&o));
        let s = json(&out.join("summary.json"));
        assert_eq!(s["experiment"], kind);
        assert!(!s["checks"].as_array().unwrap().is_empty());
    }
}
