//! Energy-efficient task offloading for vehicular edge computing.
//!
//! - [`scenario`]: road, RSU and vehicle geometry, channel gains, active sets.
//! - [`energy`]: local computation and uplink transmission energy models.
//! - [`solver`]: a log-barrier interior-point solver for separable convex programs.
//! - [`optimizer`]: complete and partial offloading programs and baselines.
//! - [`bench`]: configuration, experiment runners and result writers.

pub mod energy;
pub mod scenario;
pub mod optimizer;
pub mod solver;
pub mod bench;
