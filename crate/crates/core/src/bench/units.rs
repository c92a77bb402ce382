//! Quantities with explicit unit suffixes, e.g. `"40MHz"`, `"-174dBm/Hz"`,
//! `"10Mbit"`, `"4ms"`, `"20dB"`, normalized to SI.

use std::fmt;

use thiserror::Error;

use crate::scenario::{db_to_linear, dbm_per_hz_to_watts};

/// Physical dimension a configuration field is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Seconds.
    Time,
    /// Meters.
    Length,
    /// Meters per second.
    Speed,
    /// Hertz.
    Frequency,
    /// Bits.
    Bits,
    /// Power spectral density, watts per hertz.
    NoiseDensity,
    /// Dimensionless power ratio; `dB` is converted to linear.
    Ratio,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let units = match self {
            Dimension::Time => "s, ms, us",
            Dimension::Length => "m, km",
            Dimension::Speed => "m/s, km/h",
            Dimension::Frequency => "Hz, kHz, MHz, GHz",
            Dimension::Bits => "bit, Kbit, Mbit, Gbit",
            Dimension::NoiseDensity => "W/Hz, dBm/Hz, dBW/Hz",
            Dimension::Ratio => "dB or a plain number",
        };
        f.write_str(units)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("`{0}` does not start with a number")]
    NoNumber(String),
    #[error("`{text}` has no unit; expected one of {dimension}")]
    MissingUnit { text: String, dimension: Dimension },
    #[error("unit `{unit}` in `{text}` is not one of {dimension}")]
    UnknownUnit { text: String, unit: String, dimension: Dimension },
}

/// Parses `text` as a quantity of `dimension` and returns it in SI units.
pub fn parse_quantity(text: &str, dimension: Dimension) -> Result<f64, UnitError> {
    let trimmed = text.trim();
    let (value, unit) = split_number(trimmed)?;
    let unit = unit.trim();
    if unit.is_empty() {
        return if dimension == Dimension::Ratio {
            Ok(value)
        } else {
            Err(UnitError::MissingUnit { text: trimmed.to_string(), dimension })
        };
    }
    let scale = |factor: f64| Ok(value * factor);
    let unknown = || UnitError::UnknownUnit { text: trimmed.to_string(), unit: unit.to_string(), dimension };
    match dimension {
        Dimension::Time => match unit {
            "s" => scale(1.0),
            "ms" => scale(1e-3),
            "us" | "µs" => scale(1e-6),
            _ => Err(unknown()),
        },
        Dimension::Length => match unit {
            "m" => scale(1.0),
            "km" => scale(1e3),
            _ => Err(unknown()),
        },
        Dimension::Speed => match unit {
            "m/s" => scale(1.0),
            "km/h" => scale(1.0 / 3.6),
            _ => Err(unknown()),
        },
        Dimension::Frequency => match unit {
            "Hz" => scale(1.0),
            "kHz" => scale(1e3),
            "MHz" => scale(1e6),
            "GHz" => scale(1e9),
            _ => Err(unknown()),
        },
        Dimension::Bits => match unit.trim_end_matches('s') {
            "bit" => scale(1.0),
            "Kbit" | "kbit" => scale(1e3),
            "Mbit" => scale(1e6),
            "Gbit" => scale(1e9),
            _ => Err(unknown()),
        },
        Dimension::NoiseDensity => match unit {
            "W/Hz" => scale(1.0),
            "dBm/Hz" => Ok(dbm_per_hz_to_watts(value)),
            "dBW/Hz" => Ok(db_to_linear(value)),
            _ => Err(unknown()),
        },
        Dimension::Ratio => match unit {
            "dB" => Ok(db_to_linear(value)),
            _ => Err(unknown()),
        },
    }
}

/// Splits the longest leading float literal from its suffix.
fn split_number(text: &str) -> Result<(f64, &str), UnitError> {
    let mut best = None;
    for end in text.char_indices().map(|(i, c)| i + c.len_utf8()) {
        // reject "inf"/"nan" spellings; units never start with those letters anyway
        if let Ok(v) = text[..end].parse::<f64>() {
            if v.is_finite() {
                best = Some((v, end));
            }
        }
    }
    match best {
        Some((v, at)) => Ok((v, &text[at..])),
        None => Err(UnitError::NoNumber(text.to_string())),
    }
}
