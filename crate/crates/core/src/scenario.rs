//! Road geometry and vehicle kinematics on the frame grid.
//!
//! RSUs sit on the x axis at `r_rsu + (m-1) d`. Every vehicle enters the road
//! at x = 0 (the first RSU's coverage edge) at its arrival frame `n_k` and is
//! active for the `N = T / Δ` frames `n_k+1 ..= n_k+N`. During frame `n` it
//! talks to the nearest RSU over a line-of-sight link whose gain falls off as
//! the squared slant distance.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("`{field}` must be strictly positive and finite (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("deadline {deadline} s is not an integer number of {frame} s frames")]
    NonIntegerFrames { deadline: f64, frame: f64 },
    #[error("a window of {0} frames is too short; uplink, compute and downlink need at least 3")]
    TooFewFrames(usize),
    #[error("frame duration {frame} s is not {vehicles} slots of {slot} s")]
    SlotMismatch { frame: f64, slot: f64, vehicles: usize },
    #[error("scenario has no vehicles")]
    NoVehicles,
    #[error("scenario has no lanes")]
    NoLanes,
    #[error("vehicle {vehicle}: lane {lane} is outside 1..={lanes}")]
    LaneOutOfRange { vehicle: usize, lane: usize, lanes: usize },
    #[error("vehicle {vehicle}: `{field}` is invalid ({value})")]
    InvalidTask { vehicle: usize, field: &'static str, value: f64 },
    #[error("RSU index {index} is outside 1..={count}")]
    RsuOutOfRange { index: usize, count: usize },
    #[error("vehicle {vehicle} is not active in frame {frame}")]
    InactiveFrame { vehicle: usize, frame: usize },
    #[error("road of {travel} m is shorter than one coverage radius ({radius} m)")]
    RoadTooShort { travel: f64, radius: f64 },
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// A point on the road plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Scenario constants in SI units (bits, seconds, hertz, watts, joules, meters).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    /// RSU coverage radius `r_rsu`.
    pub rsu_radius: f64,
    /// Distance `d` between neighbouring RSUs.
    pub rsu_spacing: f64,
    pub lane_width: f64,
    /// Antenna height `H`.
    pub rsu_height: f64,
    /// Speed `v_j` of lane `j` (index 0 is lane 1).
    pub lane_speeds: Vec<f64>,
    /// Bandwidth `B` of each direction.
    pub bandwidth: f64,
    /// Noise power spectral density `N0` in W/Hz.
    pub noise_psd: f64,
    /// Received power `h0` at 1 m for 1 W of transmit power.
    pub reference_gain: f64,
    /// Per-vehicle deadline `T`, measured from arrival.
    pub deadline: f64,
    /// Frame duration `Δ`.
    pub frame: f64,
    /// Slot duration `δ = Δ / K`.
    pub slot: f64,
    /// Per-slot uplink cap `L_u_max`.
    pub uplink_cap: f64,
    /// Per-slot downlink cap `L_d_max`.
    pub downlink_cap: f64,
    /// Uplink bits one RSU accepts per frame, `L_max`.
    pub rsu_uplink_cap: f64,
    /// Number of deployed RSUs `M`.
    pub rsu_count: usize,
    /// RSU switched capacitance `γ^r` (reporting only).
    pub rsu_capacitance: f64,
    /// RSU CPU frequency `f^r` (reporting only).
    pub rsu_frequency: f64,
    /// Largest admissible `bits / (B δ)` exponent in the transmission energy.
    pub max_exponent: f64,
}

impl ScenarioConfig {
    /// The reference deployment: 3 lanes at 20/25/30 m/s, RSUs every 200 m,
    /// 40 MHz, 20 dB reference SNR, 40 ms frames, 20 s deadline.
    pub fn reference(vehicles: usize) -> Self {
        let bandwidth = 40e6;
        let noise_psd = dbm_per_hz_to_watts(-174.0);
        let frame = 0.04;
        let deadline = 20.0;
        let lane_speeds = vec![20.0, 25.0, 30.0];
        let rsu_count = required_rsu_count(30.0, deadline, 100.0, 200.0).unwrap_or(1);
        ScenarioConfig {
            rsu_radius: 100.0,
            rsu_spacing: 200.0,
            lane_width: 3.5,
            rsu_height: 10.0,
            lane_speeds,
            bandwidth,
            noise_psd,
            reference_gain: db_to_linear(20.0) * noise_psd * bandwidth,
            deadline,
            frame,
            slot: frame / vehicles.max(1) as f64,
            uplink_cap: 180e3,
            downlink_cap: 140e3,
            rsu_uplink_cap: 250e3,
            rsu_count,
            rsu_capacitance: 1e-28,
            rsu_frequency: 1e9,
            max_exponent: 64.0,
        }
    }

    pub fn lanes(&self) -> usize {
        self.lane_speeds.len()
    }

    pub fn max_speed(&self) -> f64 {
        self.lane_speeds.iter().copied().fold(0.0, f64::max)
    }

    /// Bits a full-power-budget slot carries at unit exponent, `B δ`.
    pub fn slot_capacity(&self) -> f64 {
        self.bandwidth * self.slot
    }

    /// Returns a copy with a different deadline and the RSU count re-derived
    /// for the longer or shorter road.
    pub fn with_deadline(&self, deadline: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.deadline = deadline;
        cfg.rsu_count =
            required_rsu_count(self.max_speed(), deadline, self.rsu_radius, self.rsu_spacing)?;
        Ok(cfg)
    }

    pub fn rsu_positions(&self) -> Vec<Point> {
        (1..=self.rsu_count)
            .map(|m| Point::new(self.rsu_radius + (m - 1) as f64 * self.rsu_spacing, 0.0))
            .collect()
    }

    pub fn validate(&self, vehicles: usize) -> Result<()> {
        let positive = [
            ("rsu_radius", self.rsu_radius),
            ("rsu_spacing", self.rsu_spacing),
            ("lane_width", self.lane_width),
            ("rsu_height", self.rsu_height),
            ("bandwidth", self.bandwidth),
            ("noise_psd", self.noise_psd),
            ("reference_gain", self.reference_gain),
            ("deadline", self.deadline),
            ("frame", self.frame),
            ("slot", self.slot),
            ("uplink_cap", self.uplink_cap),
            ("downlink_cap", self.downlink_cap),
            ("rsu_uplink_cap", self.rsu_uplink_cap),
            ("rsu_capacitance", self.rsu_capacitance),
            ("rsu_frequency", self.rsu_frequency),
            ("max_exponent", self.max_exponent),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::NonPositive { field, value });
            }
        }
        if self.lane_speeds.is_empty() {
            return Err(ScenarioError::NoLanes);
        }
        for &v in &self.lane_speeds {
            if !(v.is_finite() && v > 0.0) {
                return Err(ScenarioError::NonPositive { field: "lane_speeds", value: v });
            }
        }
        if self.rsu_count == 0 {
            return Err(ScenarioError::NonPositive { field: "rsu_count", value: 0.0 });
        }
        if vehicles == 0 {
            return Err(ScenarioError::NoVehicles);
        }
        let expected = self.frame / vehicles as f64;
        if ((self.slot - expected) / expected).abs() > 1e-12 {
            return Err(ScenarioError::SlotMismatch {
                frame: self.frame,
                slot: self.slot,
                vehicles,
            });
        }
        frames_per_window(self.deadline, self.frame)?;
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_per_hz_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

/// One vehicle's task and its place in traffic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleTask {
    /// Input size `L_k` in bits.
    pub input_bits: f64,
    /// CPU cycles per input bit `C_k`.
    pub cycles_per_bit: f64,
    /// Output bits per input bit `κ_k`.
    pub output_ratio: f64,
    /// Switched capacitance `γ_k^v` of the on-board CPU.
    pub capacitance: f64,
    /// 1-based lane index.
    pub lane: usize,
    /// Arrival frame `n_k`; the vehicle is active in `n_k+1 ..= n_k+N`.
    pub arrival_frame: usize,
}

impl VehicleTask {
    pub fn validate(&self, vehicle: usize, lanes: usize) -> Result<()> {
        let checks = [
            ("input_bits", self.input_bits),
            ("cycles_per_bit", self.cycles_per_bit),
            ("capacitance", self.capacitance),
            ("output_ratio", self.output_ratio),
        ];
        for (field, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::InvalidTask { vehicle, field, value });
            }
        }
        if self.output_ratio > 1.0 {
            return Err(ScenarioError::InvalidTask {
                vehicle,
                field: "output_ratio",
                value: self.output_ratio,
            });
        }
        if self.lane == 0 || self.lane > lanes {
            return Err(ScenarioError::LaneOutOfRange { vehicle, lane: self.lane, lanes });
        }
        Ok(())
    }
}

/// `⌈(v_max T − r_rsu)/d + 1/2⌉`, the number of RSUs that covers the fastest
/// vehicle's whole trip.
pub fn required_rsu_count(v_max: f64, deadline: f64, rsu_radius: f64, spacing: f64) -> Result<usize> {
    for (field, value) in [
        ("v_max", v_max),
        ("deadline", deadline),
        ("rsu_radius", rsu_radius),
        ("rsu_spacing", spacing),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(ScenarioError::NonPositive { field, value });
        }
    }
    let travel = v_max * deadline;
    if travel < rsu_radius {
        return Err(ScenarioError::RoadTooShort { travel, radius: rsu_radius });
    }
    let raw = (travel - rsu_radius) / spacing + 0.5;
    // absorb representation error so exact integers do not round up
    Ok((raw - 1e-12 * raw.max(1.0)).ceil().max(1.0) as usize)
}

/// Frames per vehicle window, `N = T / Δ`.
pub fn frames_per_window(deadline: f64, frame: f64) -> Result<usize> {
    let ratio = deadline / frame;
    let rounded = ratio.round();
    if !ratio.is_finite() || rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(ScenarioError::NonIntegerFrames { deadline, frame });
    }
    let n = rounded as usize;
    if n < 3 {
        return Err(ScenarioError::TooFewFrames(n));
    }
    Ok(n)
}

pub fn rsu_position(m: usize, config: &ScenarioConfig) -> Result<Point> {
    if m == 0 || m > config.rsu_count {
        return Err(ScenarioError::RsuOutOfRange { index: m, count: config.rsu_count });
    }
    Ok(Point::new(config.rsu_radius + (m - 1) as f64 * config.rsu_spacing, 0.0))
}

/// Position of `task` during absolute frame `frame`.
pub fn vehicle_position(task: &VehicleTask, frame: usize, config: &ScenarioConfig) -> Result<Point> {
    let n = frames_per_window(config.deadline, config.frame)?;
    let local = frame.checked_sub(task.arrival_frame).filter(|&l| l >= 1 && l <= n);
    let Some(local) = local else {
        return Err(ScenarioError::InactiveFrame { vehicle: 0, frame });
    };
    let speed = config
        .lane_speeds
        .get(task.lane.wrapping_sub(1))
        .copied()
        .ok_or(ScenarioError::LaneOutOfRange {
            vehicle: 0,
            lane: task.lane,
            lanes: config.lanes(),
        })?;
    Ok(local_position(local, speed, task.lane, config))
}

fn local_position(local_frame: usize, speed: f64, lane: usize, config: &ScenarioConfig) -> Point {
    Point::new(
        local_frame as f64 * config.frame * speed,
        (lane - 1) as f64 * config.lane_width,
    )
}

/// 1-based index of the closest RSU; exact ties go to the lower index.
pub fn nearest_rsu(p: &Point, rsus: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, r) in rsus.iter().enumerate() {
        let d = p.distance_squared(r);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best + 1
}

/// Line-of-sight gain `h0 / (|p - r|² + H²)`.
pub fn los_gain(p: &Point, rsu: &Point, config: &ScenarioConfig) -> f64 {
    config.reference_gain / (p.distance_squared(rsu) + config.rsu_height * config.rsu_height)
}

/// Gain between vehicle `vehicle` and its nearest RSU in absolute frame `frame`.
pub fn channel_gain(
    vehicle: usize,
    frame: usize,
    config: &ScenarioConfig,
    tasks: &[VehicleTask],
) -> Result<f64> {
    let task = tasks.get(vehicle).ok_or(ScenarioError::InactiveFrame { vehicle, frame })?;
    let p = vehicle_position(task, frame, config).map_err(|e| match e {
        ScenarioError::InactiveFrame { frame, .. } => ScenarioError::InactiveFrame { vehicle, frame },
        ScenarioError::LaneOutOfRange { lane, lanes, .. } => {
            ScenarioError::LaneOutOfRange { vehicle, lane, lanes }
        }
        other => other,
    })?;
    let rsus = config.rsu_positions();
    let m = nearest_rsu(&p, &rsus);
    Ok(los_gain(&p, &rsus[m - 1], config))
}

/// State of one vehicle during one of its active frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameState {
    /// Absolute frame index (1-based).
    pub frame: usize,
    pub position: Point,
    /// 1-based index of the serving RSU.
    pub rsu: usize,
    pub gain: f64,
}

/// Precomputed trajectories: `tracks[k][ν-1]` is vehicle `k` in local frame `ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub frames_per_vehicle: usize,
    pub global_frames: usize,
    pub tracks: Vec<Vec<FrameState>>,
}

impl Timeline {
    pub fn state(&self, vehicle: usize, local_frame: usize) -> &FrameState {
        &self.tracks[vehicle][local_frame - 1]
    }
}

pub fn build_timeline(config: &ScenarioConfig, tasks: &[VehicleTask]) -> Result<Timeline> {
    config.validate(tasks.len())?;
    let n = frames_per_window(config.deadline, config.frame)?;
    let rsus = config.rsu_positions();
    let mut tracks = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        task.validate(k, config.lanes())?;
        let speed = config.lane_speeds[task.lane - 1];
        let track = (1..=n)
            .map(|local| {
                let position = local_position(local, speed, task.lane, config);
                let rsu = nearest_rsu(&position, &rsus);
                FrameState {
                    frame: task.arrival_frame + local,
                    position,
                    rsu,
                    gain: los_gain(&position, &rsus[rsu - 1], config),
                }
            })
            .collect();
        tracks.push(track);
    }
    let global_frames = tasks.iter().map(|t| t.arrival_frame).max().unwrap_or(0) + n;
    Ok(Timeline { frames_per_vehicle: n, global_frames, tracks })
}

/// Member of an access group: vehicle index and its local frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Member {
    pub vehicle: usize,
    pub local_frame: usize,
}

/// Vehicles served by the same RSU in the same absolute frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSets {
    groups: BTreeMap<(usize, usize), Vec<Member>>,
}

impl ActiveSets {
    /// Groups keyed by `(absolute frame, rsu)`, in ascending key order.
    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<Member>)> {
        self.groups.iter()
    }

    pub fn group(&self, frame: usize, rsu: usize) -> Option<&[Member]> {
        self.groups.get(&(frame, rsu)).map(Vec::as_slice)
    }

    pub fn at_frame(&self, frame: usize) -> impl Iterator<Item = (usize, &[Member])> {
        self.groups
            .range((frame, 0)..(frame + 1, 0))
            .map(|(&(_, rsu), members)| (rsu, members.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

pub fn active_sets(timeline: &Timeline) -> ActiveSets {
    let mut groups: BTreeMap<(usize, usize), Vec<Member>> = BTreeMap::new();
    for (vehicle, track) in timeline.tracks.iter().enumerate() {
        for (i, state) in track.iter().enumerate() {
            groups
                .entry((state.frame, state.rsu))
                .or_default()
                .push(Member { vehicle, local_frame: i + 1 });
        }
    }
    ActiveSets { groups }
}

/// `vehicles` arrival frames drawn uniformly from `0 ..= ⌊t_max / Δ⌋`.
pub fn generate_arrivals(seed: u64, vehicles: usize, t_max: f64, frame: f64) -> Vec<usize> {
    let last = ((t_max / frame) * (1.0 + 1e-12)).floor().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..vehicles).map(|_| rng.gen_range(0..=last)).collect()
}

/// Arrival time snapped to the frame grid.
pub fn arrival_frame(t: f64, frame: f64) -> usize {
    (t / frame).round().max(0.0) as usize
}

/// A validated scenario with its precomputed timeline and access groups.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub tasks: Vec<VehicleTask>,
    pub timeline: Timeline,
    pub active: ActiveSets,
}

impl Scenario {
    pub fn new(config: ScenarioConfig, tasks: Vec<VehicleTask>) -> Result<Self> {
        let timeline = build_timeline(&config, &tasks)?;
        let active = active_sets(&timeline);
        Ok(Scenario { config, tasks, timeline, active })
    }

    pub fn vehicles(&self) -> usize {
        self.tasks.len()
    }

    pub fn frames(&self) -> usize {
        self.timeline.frames_per_vehicle
    }

    /// Gain of `vehicle` in its local frame `local_frame` (1-based).
    pub fn gain(&self, vehicle: usize, local_frame: usize) -> f64 {
        self.timeline.state(vehicle, local_frame).gain
    }

    /// Same tasks under a different deadline; RSU count follows the deadline.
    pub fn with_deadline(&self, deadline: f64) -> Result<Self> {
        Scenario::new(self.config.with_deadline(deadline)?, self.tasks.clone())
    }
}
