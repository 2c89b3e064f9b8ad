//! Ready-made converter applications: parameter sets, model builders and the
//! application-specific power-flow solvers.

pub mod boost;
pub mod vsc;
