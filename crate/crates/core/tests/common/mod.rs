#![allow(dead_code)]

use vec_offload::bench::{parse_config, LoadedConfig};
use vec_offload::scenario::{Scenario, ScenarioConfig, VehicleTask};

pub const REFERENCE: &str = include_str!("../../../../configs/reference.toml");

pub fn reference() -> LoadedConfig {
    parse_config(REFERENCE, None).expect("reference config loads")
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Reference deployment with 4 s frames, so a handful of frames covers a
/// real trip, and caps loose enough that they only bind when set.
pub fn desk_config(frames: usize, vehicles: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::reference(vehicles);
    cfg.frame = 4.0;
    cfg.slot = 4.0 / vehicles as f64;
    cfg.uplink_cap = 5e6;
    cfg.downlink_cap = 5e6;
    cfg.rsu_uplink_cap = 1e7;
    cfg.with_deadline(4.0 * frames as f64).unwrap()
}

pub fn task(bits: f64, lane: usize, arrival: usize) -> VehicleTask {
    VehicleTask {
        input_bits: bits,
        cycles_per_bit: 1550.7,
        output_ratio: 0.5,
        capacitance: 1e-28,
        lane,
        arrival_frame: arrival,
    }
}

pub fn desk_scenario(frames: usize, tasks: Vec<VehicleTask>) -> Scenario {
    Scenario::new(desk_config(frames, tasks.len()), tasks).unwrap()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}
