//! Allocation plans and the independent constraint checker.

use std::fmt;

use serde::Serialize;

use super::OptimizerError;
use crate::scenario::Scenario;

/// Largest violation, in bits, that still counts as satisfied.
pub const PLAN_TOLERANCE_BITS: f64 = 1e-6;

/// Per-vehicle, per-frame bit schedule.
///
/// `uplink[k][ν − 1]` is the number of bits vehicle `k` sends in its local
/// frame `ν ∈ 1..=N`; `compute` and `downlink` use the same indexing. Uplink
/// may be non-zero only for `ν ≤ N − 2`, compute only for `2 ≤ ν ≤ N − 1` and
/// downlink only for `ν ≥ 3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPlan {
    pub uplink: Vec<Vec<f64>>,
    pub compute: Vec<Vec<f64>>,
    pub downlink: Vec<Vec<f64>>,
    /// Offloaded fraction of each vehicle's input.
    pub rho: Vec<f64>,
}

impl AllocationPlan {
    pub fn zeros(vehicles: usize, frames: usize) -> Self {
        AllocationPlan {
            uplink: vec![vec![0.0; frames]; vehicles],
            compute: vec![vec![0.0; frames]; vehicles],
            downlink: vec![vec![0.0; frames]; vehicles],
            rho: vec![0.0; vehicles],
        }
    }

    pub fn vehicles(&self) -> usize {
        self.rho.len()
    }

    pub fn frames(&self) -> usize {
        self.uplink.first().map_or(0, Vec::len)
    }

    /// Checks that the plan has one row per vehicle and one entry per frame.
    pub fn check_dimensions(&self, scenario: &Scenario) -> Result<(), OptimizerError> {
        let k = scenario.vehicles();
        let n = scenario.frames();
        let rows_ok = [&self.uplink, &self.compute, &self.downlink]
            .iter()
            .all(|rows| rows.len() == k && rows.iter().all(|r| r.len() == n));
        if rows_ok && self.rho.len() == k {
            Ok(())
        } else {
            Err(OptimizerError::DimensionMismatch {
                expected_vehicles: k,
                expected_frames: n,
                vehicles: self.rho.len(),
                frames: self.frames(),
            })
        }
    }
}

/// Constraint families of the offloading programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ConstraintFamily {
    /// Bits computed by the end of a frame never exceed bits received one frame earlier.
    UplinkCausality,
    /// Output bits sent never exceed `κ` times the bits computed one frame earlier.
    DownlinkCausality,
    /// Per-frame uplink slot capacity.
    UplinkCap,
    /// Per-frame downlink slot capacity.
    DownlinkCap,
    /// Total uplink into one RSU in one frame.
    RsuUplinkCap,
    NonNegative,
    /// Every offloaded input bit is sent up.
    UplinkTotal,
    /// Every offloaded input bit is computed.
    ComputeTotal,
    /// Every output bit is sent back.
    DownlinkTotal,
    /// `0 ≤ ρ ≤ 1`.
    OffloadRatio,
    /// Stage activity outside its frames: uplink after `N − 2`, compute in
    /// frame 1 or `N`, downlink in frames 1–2.
    PipelineWindow,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 11] = [
        ConstraintFamily::UplinkCausality,
        ConstraintFamily::DownlinkCausality,
        ConstraintFamily::UplinkCap,
        ConstraintFamily::DownlinkCap,
        ConstraintFamily::RsuUplinkCap,
        ConstraintFamily::NonNegative,
        ConstraintFamily::UplinkTotal,
        ConstraintFamily::ComputeTotal,
        ConstraintFamily::DownlinkTotal,
        ConstraintFamily::OffloadRatio,
        ConstraintFamily::PipelineWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintFamily::UplinkCausality => "UplinkCausality",
            ConstraintFamily::DownlinkCausality => "DownlinkCausality",
            ConstraintFamily::UplinkCap => "UplinkCap",
            ConstraintFamily::DownlinkCap => "DownlinkCap",
            ConstraintFamily::RsuUplinkCap => "RsuUplinkCap",
            ConstraintFamily::NonNegative => "NonNegative",
            ConstraintFamily::UplinkTotal => "UplinkTotal",
            ConstraintFamily::ComputeTotal => "ComputeTotal",
            ConstraintFamily::DownlinkTotal => "DownlinkTotal",
            ConstraintFamily::OffloadRatio => "OffloadRatio",
            ConstraintFamily::PipelineWindow => "PipelineWindow",
        }
    }
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a family is first violated: 0-based vehicle index and 1-based local
/// frame (0 for per-vehicle totals). Shared RSU rows report their first member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Offender {
    pub vehicle: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyCheck {
    pub family: ConstraintFamily,
    /// Largest violation (bits; unitless for `OffloadRatio`), 0 when satisfied.
    pub max_violation: f64,
    /// First entry over the tolerance. Per-vehicle families are scanned vehicle
    /// by vehicle and frame by frame; shared RSU rows by absolute frame.
    pub first_offender: Option<Offender>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub checks: Vec<FamilyCheck>,
    pub tolerance: f64,
}

impl ConstraintReport {
    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.max_violation <= self.tolerance)
    }

    pub fn passes_except(&self, family: ConstraintFamily) -> bool {
        self.checks
            .iter()
            .filter(|c| c.family != family)
            .all(|c| c.max_violation <= self.tolerance)
    }

    pub fn check(&self, family: ConstraintFamily) -> &FamilyCheck {
        self.checks.iter().find(|c| c.family == family).expect("every family is checked")
    }

    pub fn max_violation(&self) -> f64 {
        self.checks.iter().fold(0.0, |m, c| m.max(c.max_violation))
    }

    /// Families whose violation exceeds the tolerance.
    pub fn failing(&self) -> Vec<ConstraintFamily> {
        self.checks
            .iter()
            .filter(|c| c.max_violation > self.tolerance)
            .map(|c| c.family)
            .collect()
    }
}

struct Tracker {
    checks: Vec<FamilyCheck>,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            checks: ConstraintFamily::ALL
                .iter()
                .map(|&family| FamilyCheck { family, max_violation: 0.0, first_offender: None })
                .collect(),
        }
    }

    fn record(&mut self, family: ConstraintFamily, violation: f64, vehicle: usize, frame: usize) {
        let slot = self
            .checks
            .iter_mut()
            .find(|c| c.family == family)
            .expect("every family is tracked");
        let violation = if violation.is_nan() { f64::INFINITY } else { violation };
        if violation > slot.max_violation {
            slot.max_violation = violation;
        }
        if violation > PLAN_TOLERANCE_BITS && slot.first_offender.is_none() {
            slot.first_offender = Some(Offender { vehicle, frame });
        }
    }
}

/// Checks `plan` against every constraint family, straight from the
/// definitions and without reference to any solver output.
pub fn validate_plan(plan: &AllocationPlan, scenario: &Scenario) -> Result<ConstraintReport, OptimizerError> {
    plan.check_dimensions(scenario)?;
    let cfg = &scenario.config;
    let n = scenario.frames();
    let mut t = Tracker::new();
    use ConstraintFamily::*;

    for (k, task) in scenario.tasks.iter().enumerate() {
        let (u, c, d) = (&plan.uplink[k], &plan.compute[k], &plan.downlink[k]);
        let rho = plan.rho[k];
        t.record(OffloadRatio, (-rho).max(rho - 1.0), k, 0);

        for nu in 1..=n {
            let i = nu - 1;
            for v in [u[i], c[i], d[i]] {
                t.record(NonNegative, -v, k, nu);
            }
            if nu > n - 2 {
                t.record(PipelineWindow, u[i].abs(), k, nu);
            }
            if nu == 1 || nu == n {
                t.record(PipelineWindow, c[i].abs(), k, nu);
            }
            if nu <= 2 {
                t.record(PipelineWindow, d[i].abs(), k, nu);
            }
            t.record(UplinkCap, u[i] - cfg.uplink_cap, k, nu);
            t.record(DownlinkCap, d[i] - cfg.downlink_cap, k, nu);
        }

        // Σ_{i≤m} compute[i+1] ≤ Σ_{i≤m} uplink[i];  Σ_{i≤m} downlink[i+2] ≤ κ Σ_{i≤m} compute[i+1]
        let mut cum_u = 0.0;
        let mut cum_c = 0.0;
        let mut cum_d = 0.0;
        for m in 1..=n - 2 {
            cum_u += u[m - 1];
            cum_c += c[m];
            cum_d += d[m + 1];
            t.record(UplinkCausality, cum_c - cum_u, k, m + 1);
            t.record(DownlinkCausality, cum_d - task.output_ratio * cum_c, k, m + 2);
        }

        let offloaded = rho * task.input_bits;
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        t.record(UplinkTotal, (sum(u) - offloaded).abs(), k, 0);
        t.record(ComputeTotal, (sum(c) - offloaded).abs(), k, 0);
        t.record(DownlinkTotal, (sum(d) - task.output_ratio * offloaded).abs(), k, 0);
    }

    for (_, members) in scenario.active.iter() {
        let load: f64 = members.iter().map(|m| plan.uplink[m.vehicle][m.local_frame - 1]).sum();
        if let Some(first) = members.first() {
            t.record(RsuUplinkCap, load - cfg.rsu_uplink_cap, first.vehicle, first.local_frame);
        }
    }

    Ok(ConstraintReport { checks: t.checks, tolerance: PLAN_TOLERANCE_BITS })
}
