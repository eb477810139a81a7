//! End-to-end runs of the command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use bellflow::cli::run;
use serde_json::{json, Value};
use tempfile::TempDir;

fn lattice_config(n_sites: usize, n_max: usize, trajectories: usize) -> Value {
    json!({
        "model": {"grid": {"length": n_sites as f64, "n_sites": n_sites}, "n_max": n_max, "coupling": 1.0,
                  "form_factor": {"type": "gaussian", "width": 2.0}},
        "initial_state": {"type": "vacuum"},
        "propagator": {"dt_psi": 0.01, "t_final": 0.5, "sample_times": [0.25, 0.5]},
        "process": {"mode": "lattice", "dt": 0.005, "trajectories": trajectories, "root_seed": 3}
    })
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn bellflow(command: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "bellflow".to_string(),
        command.to_string(),
        "--config".to_string(),
        config.display().to_string(),
        "--out-dir".to_string(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    run(args)
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn evolve_conserves_norm_and_energy() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &lattice_config(6, 2, 10));
    assert_eq!(bellflow("evolve", &config, dir.path(), &[]), 0);
    let (header, rows) = csv_rows(&dir.path().join("norms.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let norm_drift: f64 = row[col("norm_drift")].parse().unwrap();
        let energy_drift: f64 = row[col("energy_drift")].parse().unwrap();
        assert!(norm_drift.abs() <= 1e-9 && energy_drift.abs() <= 1e-9);
    }
    assert!(dir.path().join("psi_snapshots.json").exists());
    assert!(dir.path().join("velocity_field.csv").exists());
}

#[test]
fn jsonl_is_identical_across_parallelism() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &lattice_config(6, 2, 64));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(bellflow("simulate", &config, &a, &["--parallelism", "1"]), 0);
    assert_eq!(bellflow("simulate", &config, &b, &["--parallelism", "4"]), 0);
    let read = |p: &Path| fs::read_to_string(p.join("trajectories.jsonl")).unwrap();
    let (x, y) = (read(&a), read(&b));
    let body = |s: &str| s.split_once('\n').unwrap().1.to_string();
    assert_eq!(body(&x), body(&y));
    assert_eq!(x.lines().count(), 65);
    let header: Value = serde_json::from_str(x.lines().next().unwrap()).unwrap();
    assert_eq!(header["root_seed"], 3);
    assert_eq!(header["trajectories"], 64);
    assert_eq!(
        fs::read_to_string(a.join("histograms.csv")).unwrap(),
        fs::read_to_string(b.join("histograms.csv")).unwrap()
    );
}

#[test]
fn seed_override_changes_trajectories() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &lattice_config(6, 2, 32));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(bellflow("simulate", &config, &a, &[]), 0);
    assert_eq!(bellflow("simulate", &config, &b, &["--seed", "4"]), 0);
    let read = |p: &Path| fs::read_to_string(p.join("trajectories.jsonl")).unwrap();
    assert_ne!(
        read(&a).split_once('\n').unwrap().1,
        read(&b).split_once('\n').unwrap().1
    );
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &lattice_config(4, 1, 4000));
    assert_eq!(bellflow("verify", &config, dir.path(), &[]), 0);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);

    let mut control = lattice_config(4, 1, 4000);
    control["analysis"] = json!({"compare_against": "initial"});
    let config = write_config(dir.path(), "neg.json", &control);
    assert_eq!(bellflow("verify", &config, &dir.path().join("neg"), &[]), 3);
}

#[test]
fn rates_from_the_vacuum_vanish_at_time_zero() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &lattice_config(6, 2, 10));
    assert_eq!(bellflow("rates", &config, dir.path(), &["--time", "0"]), 0);
    let out: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rates.json")).unwrap()).unwrap();
    let destinations = out["rates"]["destinations"].as_array().unwrap();
    assert!(!destinations.is_empty());
    assert!(destinations.iter().all(|d| d["rate"].as_f64().unwrap() == 0.0));

    assert_eq!(bellflow("rates", &config, dir.path(), &["--time", "0.3"]), 0);
    let out: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rates.json")).unwrap()).unwrap();
    assert!(out["rates"]["total_rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes_distinguish_input_errors() {
    let dir = TempDir::new().unwrap();
    let mut bad = lattice_config(6, 2, 10);
    bad["process"]["mode"] = json!("teleport");
    let config = write_config(dir.path(), "bad.json", &bad);
    assert_eq!(bellflow("simulate", &config, dir.path(), &[]), 2);

    let mut bad = lattice_config(6, 2, 10);
    bad["model"]["mass"] = json!(-2.0);
    let config = write_config(dir.path(), "mass.json", &bad);
    assert_eq!(bellflow("evolve", &config, dir.path(), &[]), 2);

    let config = write_config(dir.path(), "c.json", &lattice_config(6, 2, 10));
    assert_eq!(bellflow("rates", &config, dir.path(), &["--positions", "1,2,3"]), 2);

    assert_eq!(bellflow("evolve", &dir.path().join("missing.json"), dir.path(), &[]), 1);
    assert_eq!(run(["bellflow", "no-such-command"]), 1);
}

fn dirac_config(mode: &str, spinor: [[f64; 2]; 2]) -> Value {
    json!({
        "model": {"grid": {"length": 40.0, "n_sites": 64}, "n_max": 1, "coupling": 0.0, "mode": mode,
                  "dirac": {"mass": 1.0, "c": 1.0}},
        "initial_state": {"type": "spinor_packet", "center": 20.0, "width": 2.0, "momentum": 0.5, "spinor": spinor},
        "propagator": {"dt_psi": 0.01, "t_final": 2.0},
        "process": {"dt": 0.001}
    })
}

#[test]
fn dirac_demo_stays_below_light_speed() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "d.json",
        &dirac_config("dirac_1p", [[1.0, 0.0], [0.0, 0.0]]),
    );
    assert_eq!(bellflow("dirac-demo", &config, dir.path(), &[]), 0);
    let (_, rows) = csv_rows(&dir.path().join("dirac_path.csv"));
    assert_eq!(rows.len(), 2001);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap().abs() <= 1.0));

    let config = write_config(
        dir.path(),
        "z.json",
        &dirac_config("dirac_1p", [[0.0, 0.0], [0.0, 0.0]]),
    );
    assert_eq!(bellflow("dirac-demo", &config, dir.path(), &[]), 2);
    let config = write_config(
        dir.path(),
        "kg.json",
        &dirac_config("klein_gordon", [[1.0, 0.0], [0.0, 0.0]]),
    );
    assert_eq!(bellflow("dirac-demo", &config, dir.path(), &[]), 2);
}

#[test]
fn free_field_produces_no_events() {
    let dir = TempDir::new().unwrap();
    let mut free = lattice_config(6, 2, 50);
    free["model"]["coupling"] = json!(0.0);
    let config = write_config(dir.path(), "free.json", &free);
    assert_eq!(bellflow("simulate", &config, dir.path(), &[]), 0);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for kind in ["creation", "annihilation", "hop"] {
        assert_eq!(summary["events"][kind], 0);
    }
}

#[test]
fn invalid_thresholds_are_rejected() {
    let dir = TempDir::new().unwrap();
    let mut bad = lattice_config(6, 2, 10);
    bad["analysis"] = json!({"tv_max": 1.5});
    let config = write_config(dir.path(), "bad.json", &bad);
    assert_eq!(bellflow("verify", &config, dir.path(), &[]), 2);
    bad["analysis"] = json!({"p_min": -0.1});
    let config = write_config(dir.path(), "bad2.json", &bad);
    assert_eq!(bellflow("verify", &config, dir.path(), &[]), 2);
}
