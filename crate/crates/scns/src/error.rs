use thiserror::Error;

/// Unified error type for field operations, stepping, experiments and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A field failed structural validation (Hermitian symmetry, size, ...).
    #[error("invalid field: {0}")]
    InvalidField(String),

    /// Two fields live on incompatible grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A parameter is out of its admissible range.
    #[error("invalid parameter {name}: {message}")]
    Parameter { name: &'static str, message: String },

    /// Density (or its symmetrized counterpart) dropped to or below zero.
    #[error("vacuum state: min value {min} at node {node}")]
    Vacuum { node: usize, min: f64 },

    /// The viscosity coefficient 1/rho(r) could not be evaluated safely.
    #[error("singular coefficient: min r {min_r:e} at or below floor {floor:e}")]
    SingularCoefficient { min_r: f64, floor: f64 },

    /// A time step was rejected (backtracking residual, positivity, ...).
    #[error("step rejected: {0}")]
    StepRejected(String),

    /// A CFL restriction failed for the attempted step size.
    #[error("cfl violation ({kind}): dt {dt:e} exceeds bound {bound:e}")]
    CflViolation { kind: &'static str, dt: f64, bound: f64 },

    /// The Picard window did not contract.
    #[error("fixed-point window too long: ratio {ratio} after {iterations} iterations")]
    WindowTooLong { ratio: f64, iterations: usize },

    /// Configuration parse or validation failure.
    #[error("config: key `{key}`: {message}")]
    Config { key: String, message: String },

    /// A noise hypothesis check failed.
    #[error("noise hypothesis: {0}")]
    NoiseHypothesis(String),

    /// Malformed snapshot file.
    #[error("snapshot format: {0}")]
    SnapshotFormat(String),

    /// Snapshot payload checksum mismatch.
    #[error("snapshot checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    /// An initial datum does not fit the configured shell schedule.
    #[error("datum outside shell schedule: {0}")]
    OutOfSchedule(String),

    /// A guard implication of the stopping machinery failed.
    #[error("stopping guard violated: {0}")]
    GuardViolation(String),

    /// A runtime audit (maximum principle, cache coherence, ...) failed.
    #[error("audit failure: {0}")]
    AuditFailure(String),

    /// A step or path budget was exhausted before the experiment finished.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    /// Experiment-level protocol failure.
    #[error("protocol: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
