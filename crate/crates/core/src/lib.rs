//! Moment-method simulator and classical baselines for motional cooling of
//! coupled bosonic modes.
//!
//! The crate is organised around a declarative [`SystemSpec`] that compiles
//! to the drift/diffusion pair of the quadrature covariance equation
//! `dσ/dt = Aσ + σAᵀ + D`. Everything else (the Fock-space oracle, the
//! sideband and STIRAP baselines, the episodic control environment) is built
//! on that one representation.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dynamics;
pub mod env;
mod error;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod schedule;
pub mod system;

pub use dynamics::{
    adiabatic_elimination, bose_occupancy, build_generators, cooling_quotient, occupancy,
    propagate, steady_state, thermal_covariance, CovarianceState, GeneratorPair, Propagator,
    OCCUPANCY_FLOOR,
};
pub use env::{ActionMap, CoolingEnv, EnvConfig, EpisodeTrace, Observation, RewardKind, RewardSpec, StepRecord};
pub use error::{CoreError, Result};
pub use schedule::ControlSchedule;
pub use system::{
    Amplitude, BipartiteParams, CouplingKind, CouplingSpec, ModeSpec, SystemSpec,
    TripartiteParams,
};

pub use num_complex::Complex64;

/// One phonon period in units of `1/ω_b`.
pub const PERIOD: f64 = 2.0 * std::f64::consts::PI;

/// Converts a time in units of `1/ω_b` to phonon periods.
pub fn to_periods(t: f64) -> f64 {
    t / PERIOD
}

/// Converts a duration in phonon periods to units of `1/ω_b`.
pub fn from_periods(periods: f64) -> f64 {
    periods * PERIOD
}
