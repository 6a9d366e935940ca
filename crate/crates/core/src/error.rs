use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error(
        "matrix exponential produced non-finite entries (|A|_1 = {drift_norm:.3e}, dt = {dt:.3e}, \
         |A dt|_1 = {scaled_norm:.3e})"
    )]
    NonFinitePropagator {
        drift_norm: f64,
        dt: f64,
        scaled_norm: f64,
    },

    #[error("no steady state: drift has spectral abscissa {abscissa:.3e} >= 0 (dynamically unstable)")]
    NoSteadyState { abscissa: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error(
        "Fock space too large: dimension {dimension} exceeds the limit {limit} \
         (a dense density matrix would need ~{required_mib:.1} MiB)"
    )]
    DimensionOverflow {
        dimension: usize,
        limit: usize,
        required_mib: f64,
    },

    #[error(
        "integrator step size underflow at t = {time:.6} (h = {step:.3e}); the system is too \
         stiff for the Fock oracle, use a smaller instance or the moment method"
    )]
    StepSizeUnderflow { time: f64, step: f64 },

    #[error("target quotient {target:.3e} unreachable; best achieved quotient {best:.3e}")]
    TargetUnreachable { target: f64, best: f64 },

    #[error("episode aborted: {0}")]
    EpisodeAborted(String),
}
