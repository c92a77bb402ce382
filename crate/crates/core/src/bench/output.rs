//! CSV, summary and manifest writers. Numbers are printed with Rust's
//! shortest round-trip formatting so that equal runs give equal bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::BenchError;
use crate::optimizer::{AllocationPlan, EnergyReport};
use crate::scenario::Scenario;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything that determines a run's CSV output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub strategies: Vec<String>,
    pub deadline_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub formulation: String,
    pub tolerance: f64,
    pub output_dir: String,
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let io = |source| BenchError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })
}

/// Renders rows as CSV with a header, UTF-8, LF line endings.
pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    // writing to a Vec cannot fail
    w.write_record(header).expect("in-memory CSV");
    for row in rows {
        w.write_record(row).expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

pub(crate) fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), BenchError> {
    let mut json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &json)
}

pub(crate) const ALLOCATION_HEADER: [&str; 9] = [
    "vehicle",
    "lane",
    "absolute_frame",
    "x_position_m",
    "rsu_index",
    "channel_gain",
    "uplink_bits",
    "compute_bits",
    "downlink_bits",
];

pub(crate) const ENERGY_HEADER: [&str; 4] = ["vehicle", "uplink_J", "local_J", "rho"];

/// One row per vehicle and local frame, vehicles in index order.
pub(crate) fn allocation_rows(plan: &AllocationPlan, scenario: &Scenario) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(scenario.vehicles() * scenario.frames());
    for (k, task) in scenario.tasks.iter().enumerate() {
        for nu in 1..=scenario.frames() {
            let state = scenario.timeline.state(k, nu);
            rows.push(vec![
                k.to_string(),
                task.lane.to_string(),
                state.frame.to_string(),
                state.position.x.to_string(),
                state.rsu.to_string(),
                state.gain.to_string(),
                plan.uplink[k][nu - 1].to_string(),
                plan.compute[k][nu - 1].to_string(),
                plan.downlink[k][nu - 1].to_string(),
            ]);
        }
    }
    rows
}

pub(crate) fn energy_rows(plan: &AllocationPlan, energy: &EnergyReport) -> Vec<Vec<String>> {
    (0..plan.vehicles())
        .map(|k| {
            vec![k.to_string(), energy.uplink[k].to_string(), energy.local[k].to_string(), plan.rho[k].to_string()]
        })
        .collect()
}

/// Rebuilds a plan from `allocation.csv` and `energy.csv` in `dir`.
pub fn read_plan(dir: &Path, scenario: &Scenario) -> Result<AllocationPlan, BenchError> {
    let mut plan = AllocationPlan::zeros(scenario.vehicles(), scenario.frames());

    let path = dir.join("allocation.csv");
    let mut seen = vec![vec![false; scenario.frames()]; scenario.vehicles()];
    for (line, record) in records(&path, &ALLOCATION_HEADER)?.iter().enumerate() {
        let bad = |reason: String| BenchError::Artifact { path: path.clone(), reason: format!("row {}: {reason}", line + 2) };
        let k: usize = record[0].parse().map_err(|_| bad("vehicle is not an index".into()))?;
        let frame: usize = record[2].parse().map_err(|_| bad("absolute_frame is not an index".into()))?;
        let task = scenario.tasks.get(k).ok_or_else(|| bad(format!("vehicle {k} is not in the scenario")))?;
        let nu = frame
            .checked_sub(task.arrival_frame)
            .filter(|nu| (1..=scenario.frames()).contains(nu))
            .ok_or_else(|| bad(format!("vehicle {k} is not active in frame {frame}")))?;
        let value = |col: usize| -> Result<f64, BenchError> {
            record[col].parse().map_err(|_| bad(format!("{} is not a number", ALLOCATION_HEADER[col])))
        };
        plan.uplink[k][nu - 1] = value(6)?;
        plan.compute[k][nu - 1] = value(7)?;
        plan.downlink[k][nu - 1] = value(8)?;
        seen[k][nu - 1] = true;
    }
    if let Some(k) = seen.iter().position(|row| row.iter().any(|s| !s)) {
        return Err(BenchError::Artifact { path, reason: format!("vehicle {k} is missing frames") });
    }

    let path = dir.join("energy.csv");
    let mut rho_seen = vec![false; scenario.vehicles()];
    for (line, record) in records(&path, &ENERGY_HEADER)?.iter().enumerate() {
        let bad = |reason: &str| BenchError::Artifact { path: path.clone(), reason: format!("row {}: {reason}", line + 2) };
        let k: usize = record[0].parse().map_err(|_| bad("vehicle is not an index"))?;
        if k >= scenario.vehicles() {
            return Err(bad("vehicle is not in the scenario"));
        }
        plan.rho[k] = record[3].parse().map_err(|_| bad("rho is not a number"))?;
        rho_seen[k] = true;
    }
    if let Some(k) = rho_seen.iter().position(|s| !s) {
        return Err(BenchError::Artifact { path, reason: format!("vehicle {k} has no row") });
    }
    Ok(plan)
}

fn records(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, BenchError> {
    let artifact = |reason: String| BenchError::Artifact { path: path.to_path_buf(), reason };
    let mut reader = csv::Reader::from_path(path).map_err(|e| artifact(e.to_string()))?;
    let found = reader.headers().map_err(|e| artifact(e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(artifact(format!("header is {:?}, expected {:?}", found.iter().collect::<Vec<_>>(), header)));
    }
    reader.records().collect::<Result<Vec<_>, _>>().map_err(|e| artifact(e.to_string()))
}
