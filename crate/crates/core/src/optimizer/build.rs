//! Translation of a scenario into a [`ConvexProgram`].
//!
//! Bits are measured in units of one slot's unit-exponent capacity `B δ`, so
//! every uplink term is `(N0 B δ / h) (2^u − 1)` with unit rate. Per vehicle,
//! with `U_i` the uplink of local frame `i`, `C_i` the bits computed in frame
//! `i + 1` and `D_i` the bits sent back in frame `i + 2` (`i = 1..=N−2`):
//!
//! * the **full** formulation keeps all three stages and tracks the two
//!   backlogs `Σ_{j≤i} (U_j − C_j) ≥ 0` and `Σ_{j≤i} (κ C_j − D_j) ≥ 0` as
//!   explicit non-negative variables linked by sparse equalities;
//! * the **reduced** formulation keeps only `U`. Compute and downlink enter
//!   no objective term, so computing each frame's arrivals immediately is
//!   optimal, and a downlink schedule exists iff
//!   `κ Σ_{i>j} U_i ≤ (N − 2 − j) L_d,max` for every `j`; those tail rows
//!   replace the two causality chains and the schedule is rebuilt greedily.
//!
//! The backlog after the last uplink frame is zero by the totals, so it is
//! not a variable.

use serde::Serialize;

use super::plan::{AllocationPlan, ConstraintFamily};
use super::OptimizerError;
use crate::energy::{local_execution_energy, RadioParams};
use crate::scenario::Scenario;
use crate::solver::{ConvexProgram, Term};

/// How the program represents compute and downlink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Uplink, compute, downlink and backlog variables.
    Full,
    /// Uplink variables with tail-capacity rows.
    #[default]
    Reduced,
}

/// What the program decides about the offloaded share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OffloadTarget {
    /// Every vehicle offloads its whole input.
    Complete,
    /// Offloaded shares are decision variables.
    Partial,
    /// Every vehicle offloads the given share.
    Fixed(f64),
}

/// Variable indices for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleLayout {
    /// `uplink[i − 1]` holds `U_i`.
    pub uplink: Vec<usize>,
    /// `compute[i − 1]` holds `C_i` (full formulation only).
    pub compute: Vec<usize>,
    /// `downlink[i − 1]` holds `D_i` (full formulation only).
    pub downlink: Vec<usize>,
    pub rho: Option<usize>,
}

/// A built program plus what is needed to turn its solution into a plan.
#[derive(Debug, Clone)]
pub struct OffloadingProgram {
    pub program: ConvexProgram,
    pub target: OffloadTarget,
    pub formulation: Formulation,
    pub layout: Vec<VehicleLayout>,
    /// Bits per program unit (`B δ`).
    pub unit_bits: f64,
    /// Energy not represented in the program: local execution of the
    /// non-offloaded share under a fixed ratio.
    pub constant_energy: f64,
}

fn family(f: ConstraintFamily) -> &'static str {
    f.name()
}

fn fixed_share(target: OffloadTarget) -> Result<Option<f64>, OptimizerError> {
    match target {
        OffloadTarget::Complete => Ok(Some(1.0)),
        OffloadTarget::Partial => Ok(None),
        OffloadTarget::Fixed(rho) if (0.0..=1.0).contains(&rho) => Ok(Some(rho)),
        OffloadTarget::Fixed(rho) => Err(OptimizerError::InvalidRatio(rho)),
    }
}

/// Per-vehicle capacity checks for a fixed offloaded share.
pub fn precheck(scenario: &Scenario, rho: f64) -> Result<(), OptimizerError> {
    let cfg = &scenario.config;
    let usable = (scenario.frames() - 2) as f64;
    for (k, task) in scenario.tasks.iter().enumerate() {
        let up = rho * task.input_bits;
        if usable * cfg.uplink_cap < up {
            return Err(OptimizerError::Precheck {
                vehicle: k,
                family: ConstraintFamily::UplinkTotal,
                required: up,
                available: usable * cfg.uplink_cap,
            });
        }
        let down = task.output_ratio * up;
        if usable * cfg.downlink_cap < down {
            return Err(OptimizerError::Precheck {
                vehicle: k,
                family: ConstraintFamily::DownlinkTotal,
                required: down,
                available: usable * cfg.downlink_cap,
            });
        }
    }
    Ok(())
}

/// Program for complete offloading (every vehicle offloads everything).
pub fn build_complete_offloading(scenario: &Scenario) -> Result<OffloadingProgram, OptimizerError> {
    build_program(scenario, OffloadTarget::Complete, Formulation::Full)
}

/// Program for joint bit allocation and offloaded share.
pub fn build_partial_offloading(scenario: &Scenario) -> Result<OffloadingProgram, OptimizerError> {
    build_program(scenario, OffloadTarget::Partial, Formulation::Full)
}

/// Builds the program after the per-vehicle capacity prechecks.
pub fn build_program(
    scenario: &Scenario,
    target: OffloadTarget,
    formulation: Formulation,
) -> Result<OffloadingProgram, OptimizerError> {
    if let Some(rho) = fixed_share(target)? {
        precheck(scenario, rho)?;
    }
    build_program_unchecked(scenario, target, formulation)
}

/// Builds the program without prechecks, so that infeasibility surfaces in
/// the solver's phase-1 diagnosis instead.
pub fn build_program_unchecked(
    scenario: &Scenario,
    target: OffloadTarget,
    formulation: Formulation,
) -> Result<OffloadingProgram, OptimizerError> {
    use ConstraintFamily::*;
    let rho_fixed = fixed_share(target)?;
    if rho_fixed == Some(0.0) {
        return Err(OptimizerError::NothingOffloaded);
    }
    let cfg = &scenario.config;
    let radio = RadioParams::from_config(cfg);
    let unit = radio.slot_capacity();
    if cfg.uplink_cap / unit > cfg.max_exponent {
        return Err(OptimizerError::Energy(crate::energy::EnergyError::ExponentOverflow {
            exponent: cfg.uplink_cap / unit,
            limit: cfg.max_exponent,
        }));
    }
    let n = scenario.frames();
    let stages = n - 2;
    let up_cap = cfg.uplink_cap / unit;
    let down_cap = cfg.downlink_cap / unit;
    let noise = radio.noise_energy();

    let mut p = ConvexProgram::new();
    let mut layout = Vec::with_capacity(scenario.vehicles());
    let mut constant_energy = 0.0;

    for (k, task) in scenario.tasks.iter().enumerate() {
        let input = task.input_bits / unit;
        let kappa = task.output_ratio;
        let uplink: Vec<usize> = (1..=stages)
            .map(|i| {
                let v = p.add_variable(0.0, up_cap, family(NonNegative), family(UplinkCap));
                p.add_term(Term::Exp2 { var: v, coef: noise / scenario.gain(k, i), rate: 1.0 });
                v
            })
            .collect();
        let local_full = local_execution_energy(task.input_bits, task.cycles_per_bit, task.capacitance, cfg.deadline)?;
        let rho = match rho_fixed {
            Some(r) => {
                constant_energy +=
                    local_execution_energy((1.0 - r) * task.input_bits, task.cycles_per_bit, task.capacitance, cfg.deadline)?;
                None
            }
            None => {
                let v = p.add_variable(0.0, 1.0, family(OffloadRatio), family(OffloadRatio));
                p.add_term(Term::Cubic { var: v, coef: local_full, shift: 1.0 });
                Some(v)
            }
        };
        // Σ v_i = share · total, with the share either fixed or the ρ variable.
        let total_row = |p: &mut ConvexProgram, vars: &[usize], amount: f64, fam: ConstraintFamily| {
            let mut coeffs: Vec<(usize, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
            match (rho, rho_fixed) {
                (Some(r), _) => {
                    coeffs.push((r, -amount));
                    p.add_equality(coeffs, 0.0, family(fam));
                }
                (None, Some(share)) => p.add_equality(coeffs, share * amount, family(fam)),
                (None, None) => unreachable!("a share is either fixed or a variable"),
            }
        };
        total_row(&mut p, &uplink, input, UplinkTotal);

        let (compute, downlink) = match formulation {
            Formulation::Full => {
                let compute: Vec<usize> = (1..=stages)
                    .map(|_| p.add_variable(0.0, f64::INFINITY, family(NonNegative), family(NonNegative)))
                    .collect();
                let downlink: Vec<usize> = (1..=stages)
                    .map(|_| p.add_variable(0.0, down_cap, family(NonNegative), family(DownlinkCap)))
                    .collect();
                total_row(&mut p, &compute, input, ComputeTotal);
                total_row(&mut p, &downlink, kappa * input, DownlinkTotal);
                // backlog_i = backlog_{i−1} + U_i − C_i  and  out_i = out_{i−1} + κ C_i − D_i
                let mut prev_up: Option<usize> = None;
                let mut prev_down: Option<usize> = None;
                for i in 0..stages - 1 {
                    let bu = p.add_variable(0.0, f64::INFINITY, family(UplinkCausality), family(UplinkCausality));
                    let mut row = vec![(bu, 1.0), (uplink[i], -1.0), (compute[i], 1.0)];
                    if let Some(prev) = prev_up {
                        row.push((prev, -1.0));
                    }
                    p.add_equality(row, 0.0, family(UplinkCausality));
                    prev_up = Some(bu);

                    let bd = p.add_variable(0.0, f64::INFINITY, family(DownlinkCausality), family(DownlinkCausality));
                    let mut row = vec![(bd, 1.0), (compute[i], -kappa), (downlink[i], 1.0)];
                    if let Some(prev) = prev_down {
                        row.push((prev, -1.0));
                    }
                    p.add_equality(row, 0.0, family(DownlinkCausality));
                    prev_down = Some(bd);
                }
                (compute, downlink)
            }
            Formulation::Reduced => {
                // κ Σ_{i>j} U_i ≤ (N − 2 − j) L_d,max for j = 0..N−3
                for j in 0..stages {
                    let coeffs = uplink[j..].iter().map(|&v| (v, kappa)).collect();
                    p.add_inequality(coeffs, (stages - j) as f64 * down_cap, family(DownlinkCausality));
                }
                (Vec::new(), Vec::new())
            }
        };
        layout.push(VehicleLayout { uplink, compute, downlink, rho });
    }

    // Shared uplink capacity per (absolute frame, RSU). A lone vehicle is
    // already bounded by its own slot cap unless that cap is the larger one.
    let rsu_cap = cfg.rsu_uplink_cap / unit;
    for (_, members) in scenario.active.iter() {
        let vars: Vec<usize> = members
            .iter()
            .filter(|m| m.local_frame <= stages)
            .map(|m| layout[m.vehicle].uplink[m.local_frame - 1])
            .collect();
        if vars.len() >= 2 || (vars.len() == 1 && cfg.uplink_cap > cfg.rsu_uplink_cap) {
            p.add_inequality(vars.into_iter().map(|v| (v, 1.0)).collect(), rsu_cap, family(RsuUplinkCap));
        }
    }

    Ok(OffloadingProgram { program: p, target, formulation, layout, unit_bits: unit, constant_energy })
}

impl OffloadingProgram {
    /// Converts a primal solution into a bit schedule.
    ///
    /// Totals are reconciled to the offloaded amount so that roundoff in the
    /// unit conversion does not show up as a violation.
    pub fn to_plan(&self, scenario: &Scenario, x: &[f64]) -> AllocationPlan {
        let n = scenario.frames();
        let stages = n - 2;
        let unit = self.unit_bits;
        let mut plan = AllocationPlan::zeros(scenario.vehicles(), n);
        for (k, (task, lay)) in scenario.tasks.iter().zip(&self.layout).enumerate() {
            let rho = match (lay.rho, self.target) {
                (Some(r), _) => x[r].clamp(0.0, 1.0),
                (None, OffloadTarget::Fixed(r)) => r,
                (None, _) => 1.0,
            };
            plan.rho[k] = rho;
            let offloaded = rho * task.input_bits;
            let cfg = &scenario.config;

            let mut up: Vec<f64> = lay.uplink.iter().map(|&v| (x[v] * unit).clamp(0.0, cfg.uplink_cap)).collect();
            reconcile(&mut up, offloaded, cfg.uplink_cap);
            let (comp, down) = match self.formulation {
                Formulation::Full => {
                    let mut comp: Vec<f64> = lay.compute.iter().map(|&v| (x[v] * unit).max(0.0)).collect();
                    reconcile(&mut comp, offloaded, f64::INFINITY);
                    let mut down: Vec<f64> =
                        lay.downlink.iter().map(|&v| (x[v] * unit).clamp(0.0, cfg.downlink_cap)).collect();
                    reconcile(&mut down, task.output_ratio * offloaded, cfg.downlink_cap);
                    (comp, down)
                }
                Formulation::Reduced => {
                    let comp = up.clone();
                    let down = greedy_downlink(&comp, task.output_ratio, cfg.downlink_cap);
                    (comp, down)
                }
            };
            for i in 0..stages {
                plan.uplink[k][i] = up[i];
                plan.compute[k][i + 1] = comp[i];
                plan.downlink[k][i + 2] = down[i];
            }
        }
        plan
    }
}

/// Adjusts entries so that they sum to `target`, spreading the (roundoff
/// sized) difference over the entries with the most room.
fn reconcile(values: &mut [f64], target: f64, cap: f64) {
    for _ in 0..4 {
        let diff = target - values.iter().sum::<f64>();
        if diff == 0.0 || values.is_empty() {
            return;
        }
        let pick = if diff > 0.0 {
            (0..values.len()).max_by(|&a, &b| (cap - values[a]).total_cmp(&(cap - values[b])))
        } else {
            (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b]))
        };
        if let Some(i) = pick {
            values[i] = (values[i] + diff).clamp(0.0, cap);
        }
    }
}

/// Sends output back as early as the slot cap and the computed bits allow.
fn greedy_downlink(computed: &[f64], kappa: f64, cap: f64) -> Vec<f64> {
    let target = kappa * computed.iter().sum::<f64>();
    let mut cum_c = 0.0;
    let mut sent = 0.0;
    let mut out: Vec<f64> = computed
        .iter()
        .map(|&c| {
            cum_c += c;
            let d = (kappa * cum_c - sent).clamp(0.0, cap);
            sent += d;
            d
        })
        .collect();
    // the last frames absorb any roundoff so the output total is exact
    let shortfall = target - out.iter().sum::<f64>();
    if shortfall != 0.0 {
        if let Some(last) = out.last_mut() {
            *last = (*last + shortfall).clamp(0.0, cap);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ScenarioConfig, VehicleTask};

    fn desk(frames: usize, vehicles: usize) -> Scenario {
        let mut cfg = ScenarioConfig::reference(vehicles).with_deadline(frames as f64 * 4.0).unwrap();
        cfg.frame = 4.0;
        cfg.slot = 4.0 / vehicles as f64;
        cfg.bandwidth = 1e5;
        cfg.reference_gain = 100.0 * cfg.noise_psd * cfg.bandwidth;
        let tasks = (0..vehicles)
            .map(|k| VehicleTask {
                input_bits: 3e5,
                cycles_per_bit: 1550.7,
                output_ratio: 0.5,
                capacitance: 1e-28,
                lane: 1 + k % 3,
                arrival_frame: k,
            })
            .collect();
        Scenario::new(cfg, tasks).unwrap()
    }

    #[test]
    fn forced_zeros_are_not_variables() {
        let s = desk(5, 1);
        assert_eq!(s.frames(), 5);
        let full = build_program(&s, OffloadTarget::Complete, Formulation::Full).unwrap();
        let lay = &full.layout[0];
        // three stages × (N − 2) frames, plus two backlog chains of N − 3
        assert_eq!(lay.uplink.len() + lay.compute.len() + lay.downlink.len(), 9);
        assert_eq!(full.program.num_vars(), 9 + 2 * 2);
        let plan = full.to_plan(&s, &vec![0.0; full.program.num_vars()]);
        assert_eq!(plan.uplink[0].len() * 3, 15);
    }

    #[test]
    fn totals_sum_to_offloaded_input() {
        let s = desk(6, 3);
        let prog = build_program(&s, OffloadTarget::Complete, Formulation::Full).unwrap();
        let unit = prog.unit_bits;
        let uplink_rhs: f64 = prog
            .program
            .equalities
            .iter()
            .filter(|r| prog.program.family_name(r.family) == "UplinkTotal")
            .map(|r| r.rhs * unit)
            .sum();
        let expected: f64 = s.tasks.iter().map(|t| t.input_bits).sum();
        assert!((uplink_rhs - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn precheck_names_vehicle_and_family() {
        let mut s = desk(5, 2);
        s.tasks[1].input_bits = 3.0 * s.config.uplink_cap + 1.0;
        match build_program(&s, OffloadTarget::Complete, Formulation::Reduced) {
            Err(OptimizerError::Precheck { vehicle: 1, family: ConstraintFamily::UplinkTotal, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // a partial program is always buildable
        assert!(build_program(&s, OffloadTarget::Partial, Formulation::Reduced).is_ok());
    }

    #[test]
    fn greedy_downlink_respects_causality_and_cap() {
        let computed = [4.0, 0.0, 10.0, 2.0];
        let out = greedy_downlink(&computed, 0.5, 3.0);
        assert_eq!(out, vec![2.0, 0.0, 3.0, 3.0]);
        let mut cum_c = 0.0;
        let mut cum_d = 0.0;
        for (c, d) in computed.iter().zip(&out) {
            cum_c += c;
            cum_d += d;
            assert!(cum_d <= 0.5 * cum_c + 1e-12);
        }
    }

    #[test]
    fn reconcile_hits_target_within_caps() {
        let mut v = vec![1.0, 2.0, 3.0];
        reconcile(&mut v, 6.0 + 1e-9, 3.0);
        assert!((v.iter().sum::<f64>() - (6.0 + 1e-9)).abs() < 1e-15);
        assert!(v.iter().all(|&x| x <= 3.0));
    }

    #[test]
    fn invalid_ratio_is_rejected() {
        let s = desk(5, 1);
        assert!(matches!(
            build_program(&s, OffloadTarget::Fixed(1.5), Formulation::Reduced),
            Err(OptimizerError::InvalidRatio(_))
        ));
    }
}
