//! Computation and communication energy.
//!
//! CPU energy is `γ C l f²`; running `l` bits locally within the deadline `T`
//! needs `f = C l / T`, which gives `γ C³ l³ / T²`. Sending `b` bits in one
//! slot over a channel with gain `h` costs `(N0 B δ / h)(2^(b / Bδ) − 1)` joules,
//! the inverse of the Shannon rate.

use thiserror::Error;

use crate::scenario::ScenarioConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("`{field}` must be non-negative (got {value})")]
    Negative { field: &'static str, value: f64 },
    #[error("`{field}` must be strictly positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("exponent {exponent} exceeds the limit {limit}; the slot cannot carry that many bits")]
    ExponentOverflow { exponent: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, EnergyError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    pub bandwidth: f64,
    pub slot: f64,
    pub noise_psd: f64,
    pub max_exponent: f64,
}

impl RadioParams {
    pub fn new(bandwidth: f64, slot: f64, noise_psd: f64) -> Result<Self> {
        for (field, value) in [("bandwidth", bandwidth), ("slot", slot), ("noise_psd", noise_psd)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EnergyError::NonPositive { field, value });
            }
        }
        Ok(RadioParams { bandwidth, slot, noise_psd, max_exponent: 64.0 })
    }

    pub fn from_config(config: &ScenarioConfig) -> Self {
        RadioParams {
            bandwidth: config.bandwidth,
            slot: config.slot,
            noise_psd: config.noise_psd,
            max_exponent: config.max_exponent,
        }
    }

    /// Bits carried at unit exponent, `B δ`.
    pub fn slot_capacity(&self) -> f64 {
        self.bandwidth * self.slot
    }

    /// Noise energy over one slot, `N0 B δ`.
    pub fn noise_energy(&self) -> f64 {
        self.noise_psd * self.bandwidth * self.slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Processor {
    Vehicle,
    Rsu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeParams {
    pub capacitance: f64,
    pub cycles_per_bit: f64,
    pub processor: Processor,
}

impl ComputeParams {
    pub fn new(capacitance: f64, cycles_per_bit: f64, processor: Processor) -> Result<Self> {
        for (field, value) in [("capacitance", capacitance), ("cycles_per_bit", cycles_per_bit)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EnergyError::NonPositive { field, value });
            }
        }
        Ok(ComputeParams { capacitance, cycles_per_bit, processor })
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(EnergyError::Negative { field, value })
    }
}

/// Energy to process `bits` at CPU frequency `frequency`.
pub fn computation_energy(bits: f64, frequency: f64, params: &ComputeParams) -> Result<f64> {
    non_negative("bits", bits)?;
    non_negative("frequency", frequency)?;
    Ok(params.capacitance * params.cycles_per_bit * bits * frequency * frequency)
}

/// Frequency that finishes `bits` within `deadline`.
pub fn local_cpu_frequency(cycles_per_bit: f64, bits: f64, deadline: f64) -> Result<f64> {
    if !(deadline > 0.0) {
        return Err(EnergyError::NonPositive { field: "deadline", value: deadline });
    }
    non_negative("bits", bits)?;
    Ok(cycles_per_bit * bits / deadline)
}

/// On-board energy for `bits` finished exactly at the deadline.
pub fn local_execution_energy(
    bits: f64,
    cycles_per_bit: f64,
    capacitance: f64,
    deadline: f64,
) -> Result<f64> {
    if !(deadline > 0.0) {
        return Err(EnergyError::NonPositive { field: "deadline", value: deadline });
    }
    non_negative("bits", bits)?;
    let cycles = cycles_per_bit * bits;
    Ok(capacitance * cycles * cycles * cycles / (deadline * deadline))
}

/// Energy to push `bits` through one slot at channel gain `gain`.
pub fn transmission_energy(bits: f64, gain: f64, radio: &RadioParams) -> Result<f64> {
    non_negative("bits", bits)?;
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(EnergyError::NonPositive { field: "gain", value: gain });
    }
    let exponent = bits / radio.slot_capacity();
    if exponent > radio.max_exponent {
        return Err(EnergyError::ExponentOverflow { exponent, limit: radio.max_exponent });
    }
    Ok(radio.noise_energy() / gain * (exponent * std::f64::consts::LN_2).exp_m1())
}

/// Bits one slot carries with `energy` joules at gain `gain`.
pub fn transmissible_bits(energy: f64, gain: f64, radio: &RadioParams) -> Result<f64> {
    non_negative("energy", energy)?;
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(EnergyError::NonPositive { field: "gain", value: gain });
    }
    let snr = energy * gain / radio.noise_energy();
    Ok(radio.slot_capacity() * snr.ln_1p() / std::f64::consts::LN_2)
}
