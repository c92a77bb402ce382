//! End-to-end runs of the `vecoff` binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::REFERENCE;

fn vecoff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecoff")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// Three vehicles over 6 s windows: small enough for a quick end-to-end run.
fn small_config() -> String {
    REFERENCE
        .replace("vehicles = 10", "vehicles = 3")
        .replace("frame = \"40ms\"", "frame = \"120ms\"")
        .replace("slot = \"4ms\"", "slot = \"40ms\"")
        .replace("deadline = \"20s\"", "deadline = \"6s\"")
        .replace("arrival_window = \"20s\"", "arrival_window = \"1s\"")
        .replace("{ min = \"10Mbit\", max = \"25Mbit\" }", "[\"3Mbit\", \"4Mbit\", \"5Mbit\"]")
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    reader.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn simulate_writes_reconciling_outputs_that_validate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    let out_str = out.display().to_string();
    let run = vecoff(&["simulate", "--config", &config, "--strategy", "partial", "--out", &out_str]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    for file in ["allocation.csv", "energy.csv", "summary.txt", "manifest.json"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    assert!(fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".part")));

    // per-vehicle uplink sums to ρ L
    let mut reader = csv::Reader::from_path(out.join("allocation.csv")).unwrap();
    let mut sent = [0.0f64; 3];
    for r in reader.records() {
        let r = r.unwrap();
        let k: usize = r[0].parse().unwrap();
        sent[k] += r[6].parse::<f64>().unwrap();
    }
    let rho = column(&out.join("energy.csv"), "rho");
    for (k, (&s, input)) in sent.iter().zip([3e6, 4e6, 5e6]).enumerate() {
        assert!((s - rho[k] * input).abs() <= 1e-6, "vehicle {k}: {s} vs {}", rho[k] * input);
    }

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 2024);

    let check = vecoff(&["validate", "--config", &config, "--plan", &out_str]);
    assert_eq!(check.status.code(), Some(0), "{}", String::from_utf8_lossy(&check.stdout));
    assert!(String::from_utf8_lossy(&check.stdout).contains("UplinkCausality"));
}

#[test]
fn tampered_plan_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    let out_str = out.display().to_string();
    let run = vecoff(&["simulate", "--config", &config, "--strategy", "complete", "--out", &out_str]);
    assert_eq!(run.status.code(), Some(0));
    let text = fs::read_to_string(out.join("energy.csv")).unwrap();
    let tampered: String = text
        .lines()
        .enumerate()
        .map(|(i, line)| if i == 1 { line.rsplit_once(',').unwrap().0.to_string() + ",0.5\n" } else { format!("{line}\n") })
        .collect();
    fs::write(out.join("energy.csv"), tampered).unwrap();
    let check = vecoff(&["validate", "--config", &config, "--plan", &out_str]);
    assert_eq!(check.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&check.stdout).contains("UplinkTotal"));
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &REFERENCE.replace("\"40MHz\"", "\"40 parsecs\""));
    let run = vecoff(&["validate", "--config", &config]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("radio.bandwidth"));

    let config = write_config(dir.path(), &REFERENCE.replace("seed = 2024", "seed = 2024\ncolour = 3"));
    assert_eq!(vecoff(&["validate", "--config", &config]).status.code(), Some(2));

    let missing = dir.path().join("absent.toml").display().to_string();
    assert_eq!(vecoff(&["validate", "--config", &missing]).status.code(), Some(2));
}

#[test]
fn off_grid_deadline_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("sweep").display().to_string();
    let run = vecoff(&["sweep-deadline", "--config", &config, "--deadlines", "6,6.01", "--out", &out]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn infeasible_caps_exit_with_infeasible_code() {
    let dir = tempfile::tempdir().unwrap();
    // 5 Mbit cannot cross in 6 s at 1 Kbit per slot
    let text = small_config().replace("uplink_cap = \"180Kbit\"", "uplink_cap = \"1Kbit\"");
    let config = write_config(dir.path(), &text);
    assert_eq!(vecoff(&["validate", "--config", &config]).status.code(), Some(3));
    let out = dir.path().join("run").display().to_string();
    let run = vecoff(&["simulate", "--config", &config, "--strategy", "complete", "--out", &out]);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(!dir.path().join("run").join("allocation.csv").exists());
}

#[test]
fn deadline_sweep_prints_and_writes_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("sweep");
    let out_str = out.display().to_string();
    let run = vecoff(&["sweep-deadline", "--config", &config, "--deadlines", "4.8,6", "--workers", "2", "--out", &out_str]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(out.join("deadline_sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("deadline_s,local_J,equal_J,complete_J,partial_J,equal_rsu_cap_excess_bits")
    );
    // complete offloading cannot fit 5 Mbit into 4.8 s; the cell is marked
    // and the sweep carries on
    assert!(lines.next().unwrap().split(',').nth(3) == Some("infeasible"));
    let last: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(last[0], "6");
    assert!(last[1..5].iter().all(|c| c.parse::<f64>().is_ok()), "{last:?}");
    assert!(lines.next().is_none());
    assert!(String::from_utf8_lossy(&run.stdout).contains("infeasible"));
}
