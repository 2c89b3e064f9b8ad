//! Passivity-based PID control of power converters.
//!
//! The crate models averaged power converters as bilinear port-Hamiltonian
//! systems `dx/dt = (J0 + sum_i Ji*u_i - R) Q x + E` and provides, on top of
//! that model:
//!
//! * the PID, leaky-PID (PLID) and monotone anti-windup (mPLID) controllers
//!   driven by the estimated passive output,
//! * assignable-equilibrium power-flow solvers and robustness scalars
//!   (`gamma`, per-unit deviation `delta_x`),
//! * eigenvalue-based stability certificates with certified decay rates,
//! * a fixed-step RK4 closed-loop simulator with an event schedule,
//! * two ready-made applications: a dc/dc boost converter feeding a ZI load
//!   and an HVDC grid-connected two-level voltage source converter.
//!
//! Numeric conventions: plain SI units everywhere (henry, farad, ohm,
//! siemens, volt, ampere, watt, joule, seconds). States are energy variables
//! (inductor fluxes in weber, capacitor charges in coulomb); co-energy
//! accessors on the application builders convert to currents and voltages.

pub mod apps;
pub mod controllers;
pub mod equilibria;
pub mod error;
pub mod files;
pub mod par;
pub mod phs;
pub mod report;
pub mod sim;
pub mod stability;
pub mod sweep;

pub use error::{ControllerError, EquilibriumError, FileError, PhsError, SimError, StabilityError};
pub use phs::{PhSystem, PowerBalance, State};
