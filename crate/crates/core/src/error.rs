//! Error types, one per subsystem.

use thiserror::Error;

/// Construction and evaluation errors for port-Hamiltonian models.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PhsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix {name} must be square of size {n}")]
    NotSquare { name: &'static str, n: usize },
    #[error("matrix {name} is not symmetric")]
    NotSymmetric { name: &'static str },
    #[error("matrix {name} is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { name: &'static str, min_eig: f64 },
    #[error("matrix {name} is not skew-symmetric")]
    NotSkewSymmetric { name: &'static str },
    #[error("system needs at least one modulated interconnection matrix")]
    NoInputs,
}

/// Errors from equilibrium computations and power-flow solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EquilibriumError {
    #[error("input matrix is rank deficient (rank {rank} < {m}); equilibrium control undefined")]
    RankDeficient { rank: usize, m: usize },
    #[error("demanded operating point is infeasible: power-flow discriminant {discriminant:e} < 0")]
    Infeasible { discriminant: f64 },
    #[error("reference x* = 0 has zero dissipated power; gamma undefined")]
    ZeroReference,
    #[error("power-flow solution residual {residual:e} exceeds tolerance {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error(transparent)]
    Phs(#[from] PhsError),
}

/// Errors from controller configuration and evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControllerError {
    #[error("gain {name} must be {requirement} (min eigenvalue {min_eig:e})")]
    InvalidGain {
        name: &'static str,
        requirement: &'static str,
        min_eig: f64,
    },
    #[error("gain {name} must be symmetric")]
    AsymmetricGain { name: &'static str },
    #[error("monotone map needs u_min < u_star < u_max per channel (channel {channel})")]
    NominalOutsideBounds { channel: usize },
    #[error("monotone map steepness must be positive (channel {channel})")]
    NonPositiveSteepness { channel: usize },
    #[error("monotone map does not preserve the nominal input: |w(u*) - u*| = {defect:e}")]
    FixedPointDefect { defect: f64 },
    #[error("derivative-action loop matrix is singular")]
    SingularLoop,
    #[error("saturation loop did not converge after {iterations} iterations (residual {residual:e})")]
    LoopNotConverged { iterations: usize, residual: f64 },
    #[error("leakage present but no controller reference state x_c*")]
    MissingLeakageReference,
    #[error("value {value} is outside the monotone map range ({lo}, {hi})")]
    OutsideMapRange { value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Errors from certificate evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum StabilityError {
    #[error("x_bar is not assignable: residual {residual:e} exceeds {tol:e}")]
    NotAssignable { residual: f64, tol: f64 },
    #[error("monotone-map derivative M2 is singular at the equilibrium (min entry {min_entry:e})")]
    SingularM2 { min_entry: f64 },
    #[error("certificate requires a monotone map in the controller configuration")]
    MissingMonotoneMap,
    #[error("leakage gain K_L is required for this certificate")]
    MissingLeakage,
    #[error("path integral needs a diagonal K_I")]
    NonDiagonalKi,
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Errors raised while integrating the closed loop.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("non-finite state at t = {t} s; simulation aborted")]
    NonFinite { t: f64 },
    #[error("trajectory diverged at t = {t} s (|x| = {norm:e} exceeds {limit:e})")]
    Diverged { t: f64, norm: f64, limit: f64 },
    #[error("scenario invalid: {0}")]
    BadScenario(String),
    #[error("controller failed at t = {t} s: {source}")]
    Controller { t: f64, source: ControllerError },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Phs(#[from] PhsError),
}

/// Errors from configuration, scenario and export files.
#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: unsupported format_version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
