//! TOML scenario files with unit-suffixed quantities.
//!
//! ```toml
//! seed = 2024
//! vehicles = 10
//!
//! [road]
//! rsu_radius = "100m"
//! rsu_spacing = "200m"
//! lane_width = "3.5m"
//! rsu_height = "10m"
//! lane_speeds = ["20m/s", "25m/s", "30m/s"]
//!
//! [radio]
//! bandwidth = "40MHz"
//! noise_psd = "-174dBm/Hz"
//! reference_snr = "20dB"
//! uplink_cap = "180Kbit"
//! downlink_cap = "140Kbit"
//! rsu_uplink_cap = "250Kbit"
//!
//! [timing]
//! deadline = "20s"
//! frame = "40ms"
//! slot = "4ms"
//! arrival_window = "20s"
//!
//! [compute]
//! cycles_per_bit = 1550.7
//! vehicle_capacitance = 1e-28
//! rsu_capacitance = 1e-28
//! rsu_frequency = "1GHz"
//! output_ratio = 0.5
//!
//! [tasks]
//! input_bits = { min = "10Mbit", max = "25Mbit" }
//! ```
//!
//! `tasks.input_bits` may instead list one size per vehicle; `tasks.lanes`
//! and `tasks.arrival_times` optionally pin lanes and arrivals, which
//! otherwise are round-robin and seeded draws respectively.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::units::{parse_quantity, Dimension, UnitError};
use crate::scenario::{
    arrival_frame, frames_per_window, generate_arrivals, required_rsu_count, Scenario, ScenarioConfig,
    ScenarioError, VehicleTask,
};

/// Seed used when neither the file nor the command line provides one.
pub const DEFAULT_SEED: u64 = 2024;

/// ChaCha stream for task sizes; arrivals use the default stream.
const INPUT_SIZE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("`{field}`: {source}")]
    Unit { field: String, source: UnitError },
    #[error("`{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("`{field}` lists {got} entries for {expected} vehicles")]
    Length { field: String, expected: usize, got: usize },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    vehicles: usize,
    road: RoadSection,
    radio: RadioSection,
    timing: TimingSection,
    compute: ComputeSection,
    tasks: TaskSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadSection {
    rsu_radius: String,
    rsu_spacing: String,
    lane_width: String,
    rsu_height: String,
    lane_speeds: Vec<String>,
    /// Overrides the RSU count derived from the fastest lane and the deadline.
    rsu_count: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadioSection {
    bandwidth: String,
    noise_psd: String,
    reference_snr: String,
    uplink_cap: String,
    downlink_cap: String,
    rsu_uplink_cap: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimingSection {
    deadline: String,
    frame: String,
    slot: String,
    arrival_window: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComputeSection {
    cycles_per_bit: f64,
    vehicle_capacitance: f64,
    rsu_capacitance: f64,
    rsu_frequency: String,
    output_ratio: f64,
    max_exponent: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    input_bits: InputBits,
    lanes: Option<Vec<usize>>,
    arrival_times: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InputBits {
    Range { min: String, max: String },
    List(Vec<String>),
}

/// A loaded, validated scenario and the inputs that identify it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub scenario: Scenario,
    pub seed: u64,
    /// Arrival window the arrivals were drawn from, seconds.
    pub arrival_window: f64,
    /// SHA-256 of the file contents and the effective seed, hex encoded.
    pub digest: String,
}

impl LoadedConfig {
    pub fn config(&self) -> &ScenarioConfig {
        &self.scenario.config
    }
}

/// Reads and validates a config file; `seed` overrides the file's seed.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<LoadedConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text, seed)
}

/// [`load_config`] on in-memory text.
pub fn parse_config(text: &str, seed: Option<u64>) -> Result<LoadedConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let seed = seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let k = file.vehicles;
    if k == 0 {
        return Err(invalid("vehicles", "at least one vehicle is required"));
    }

    let road = &file.road;
    let radio = &file.radio;
    let timing = &file.timing;
    let compute = &file.compute;

    let lane_speeds = road
        .lane_speeds
        .iter()
        .map(|s| quantity("road.lane_speeds", s, Dimension::Speed))
        .collect::<Result<Vec<_>, _>>()?;
    if lane_speeds.is_empty() {
        return Err(invalid("road.lane_speeds", "at least one lane is required"));
    }
    let bandwidth = quantity("radio.bandwidth", &radio.bandwidth, Dimension::Frequency)?;
    let noise_psd = quantity("radio.noise_psd", &radio.noise_psd, Dimension::NoiseDensity)?;
    let snr = quantity("radio.reference_snr", &radio.reference_snr, Dimension::Ratio)?;
    let deadline = quantity("timing.deadline", &timing.deadline, Dimension::Time)?;
    let frame = quantity("timing.frame", &timing.frame, Dimension::Time)?;
    let slot = quantity("timing.slot", &timing.slot, Dimension::Time)?;
    let rsu_radius = quantity("road.rsu_radius", &road.rsu_radius, Dimension::Length)?;
    let rsu_spacing = quantity("road.rsu_spacing", &road.rsu_spacing, Dimension::Length)?;

    let v_max = lane_speeds.iter().copied().fold(0.0, f64::max);
    let rsu_count = match road.rsu_count {
        Some(0) => return Err(invalid("road.rsu_count", "at least one RSU is required")),
        Some(m) => m,
        None => required_rsu_count(v_max, deadline, rsu_radius, rsu_spacing).map_err(scenario_error)?,
    };

    let config = ScenarioConfig {
        rsu_radius,
        rsu_spacing,
        lane_width: quantity("road.lane_width", &road.lane_width, Dimension::Length)?,
        rsu_height: quantity("road.rsu_height", &road.rsu_height, Dimension::Length)?,
        lane_speeds,
        bandwidth,
        noise_psd,
        reference_gain: snr * noise_psd * bandwidth,
        deadline,
        frame,
        slot,
        uplink_cap: quantity("radio.uplink_cap", &radio.uplink_cap, Dimension::Bits)?,
        downlink_cap: quantity("radio.downlink_cap", &radio.downlink_cap, Dimension::Bits)?,
        rsu_uplink_cap: quantity("radio.rsu_uplink_cap", &radio.rsu_uplink_cap, Dimension::Bits)?,
        rsu_count,
        rsu_capacitance: compute.rsu_capacitance,
        rsu_frequency: quantity("compute.rsu_frequency", &compute.rsu_frequency, Dimension::Frequency)?,
        max_exponent: compute.max_exponent.unwrap_or(ScenarioConfig::reference(k).max_exponent),
    };
    config.validate(k).map_err(scenario_error)?;

    let arrival_window = match &timing.arrival_window {
        Some(s) => quantity("timing.arrival_window", s, Dimension::Time)?,
        None => deadline,
    };
    if !(arrival_window.is_finite() && arrival_window >= 0.0) {
        return Err(invalid("timing.arrival_window", "must be a finite non-negative time"));
    }
    let arrivals = match &file.tasks.arrival_times {
        Some(times) => {
            check_length("tasks.arrival_times", k, times.len())?;
            times
                .iter()
                .map(|s| {
                    let t = quantity("tasks.arrival_times", s, Dimension::Time)?;
                    if t.is_finite() && t >= 0.0 {
                        Ok(arrival_frame(t, frame))
                    } else {
                        Err(invalid("tasks.arrival_times", "arrival times must be non-negative"))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => generate_arrivals(seed, k, arrival_window, frame),
    };

    let input_bits = match &file.tasks.input_bits {
        InputBits::List(list) => {
            check_length("tasks.input_bits", k, list.len())?;
            list.iter()
                .map(|s| quantity("tasks.input_bits", s, Dimension::Bits))
                .collect::<Result<Vec<_>, _>>()?
        }
        InputBits::Range { min, max } => {
            let lo = quantity("tasks.input_bits.min", min, Dimension::Bits)?;
            let hi = quantity("tasks.input_bits.max", max, Dimension::Bits)?;
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid("tasks.input_bits", "range needs 0 < min ≤ max"));
            }
            draw_input_sizes(seed, k, lo, hi)
        }
    };

    let lanes = match &file.tasks.lanes {
        Some(lanes) => {
            check_length("tasks.lanes", k, lanes.len())?;
            lanes.clone()
        }
        None => (0..k).map(|i| i % config.lanes() + 1).collect(),
    };

    let tasks: Vec<VehicleTask> = (0..k)
        .map(|i| VehicleTask {
            input_bits: input_bits[i],
            cycles_per_bit: compute.cycles_per_bit,
            output_ratio: compute.output_ratio,
            capacitance: compute.vehicle_capacitance,
            lane: lanes[i],
            arrival_frame: arrivals[i],
        })
        .collect();
    for (i, task) in tasks.iter().enumerate() {
        task.validate(i, config.lanes()).map_err(scenario_error)?;
    }

    let scenario = Scenario::new(config, tasks).map_err(scenario_error)?;
    Ok(LoadedConfig { scenario, seed, arrival_window, digest: digest(text, seed) })
}

/// Task sizes drawn uniformly from `[lo, hi]` on their own ChaCha stream so
/// that they do not shift when the vehicle count changes arrivals.
pub fn draw_input_sizes(seed: u64, vehicles: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INPUT_SIZE_STREAM);
    (0..vehicles)
        .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect()
}

fn digest(text: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

fn quantity(field: &str, text: &str, dimension: Dimension) -> Result<f64, ConfigError> {
    parse_quantity(text, dimension).map_err(|source| ConfigError::Unit { field: field.to_string(), source })
}

fn invalid(field: &str, reason: &str) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.to_string() }
}

fn check_length(field: &str, expected: usize, got: usize) -> Result<(), ConfigError> {
    if expected == got {
        Ok(())
    } else {
        Err(ConfigError::Length { field: field.to_string(), expected, got })
    }
}

/// Names the config field behind a scenario validation error.
fn scenario_error(e: ScenarioError) -> ConfigError {
    let field = match &e {
        ScenarioError::NonPositive { field, .. } => config_field(field),
        ScenarioError::NonIntegerFrames { .. } | ScenarioError::TooFewFrames(_) => "timing.deadline",
        ScenarioError::SlotMismatch { .. } => "timing.slot",
        ScenarioError::NoVehicles => "vehicles",
        ScenarioError::NoLanes => "road.lane_speeds",
        ScenarioError::LaneOutOfRange { .. } => "tasks.lanes",
        ScenarioError::InvalidTask { field, .. } => match *field {
            "input_bits" => "tasks.input_bits",
            "capacitance" => "compute.vehicle_capacitance",
            other => config_field(other),
        },
        ScenarioError::RoadTooShort { .. } => "road.rsu_radius",
        ScenarioError::RsuOutOfRange { .. } | ScenarioError::InactiveFrame { .. } => "road.rsu_count",
    };
    ConfigError::Invalid { field: field.to_string(), reason: e.to_string() }
}

fn config_field(name: &str) -> &'static str {
    match name {
        "rsu_radius" => "road.rsu_radius",
        "rsu_spacing" => "road.rsu_spacing",
        "lane_width" => "road.lane_width",
        "rsu_height" => "road.rsu_height",
        "lane_speeds" | "v_max" => "road.lane_speeds",
        "rsu_count" => "road.rsu_count",
        "bandwidth" => "radio.bandwidth",
        "noise_psd" => "radio.noise_psd",
        "reference_gain" => "radio.reference_snr",
        "uplink_cap" => "radio.uplink_cap",
        "downlink_cap" => "radio.downlink_cap",
        "rsu_uplink_cap" => "radio.rsu_uplink_cap",
        "deadline" => "timing.deadline",
        "frame" => "timing.frame",
        "slot" => "timing.slot",
        "rsu_capacitance" => "compute.rsu_capacitance",
        "rsu_frequency" => "compute.rsu_frequency",
        "max_exponent" => "compute.max_exponent",
        "cycles_per_bit" => "compute.cycles_per_bit",
        "output_ratio" => "compute.output_ratio",
        _ => "config",
    }
}

/// Checks that `deadline` gives a whole number of frames of at least 3.
pub fn check_deadline(config: &ScenarioConfig, deadline: f64) -> Result<usize, ConfigError> {
    frames_per_window(deadline, config.frame).map_err(scenario_error)
}
