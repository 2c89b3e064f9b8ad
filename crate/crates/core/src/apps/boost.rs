//! Dc/dc boost converter interfaced to a constant-impedance, constant-current
//! (ZI) load.
//!
//! Co-energy model, with modulation index `u` and load `(G0, i0)`:
//!
//! ```text
//! L diL/dt = -R iL - (1 - u) vC + v0
//! C dvC/dt =  (1 - u) iL - (G + G0) vC - i0
//! ```
//!
//! In port-Hamiltonian form: `Q = diag(1/L, 1/C)`, `R = diag(R, G + G0)`,
//! `J0 = [[0, -1], [1, 0]]`, `J1 = -J0`, `E = (v0, -i0)`, so
//! `g(x) = (vC, -iL)` and rank g = n - 1 = 1.

use nalgebra::{DMatrix, DVector};

use crate::equilibria::{assignability_residual, equilibrium_control};
use crate::error::EquilibriumError;
use crate::phs::{PhSystem, State};

/// Absolute power-flow residual accepted from the boost solver, in watt.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Physical parameters of the converter plus the estimated and actual load.
///
/// The estimated pair `(g0_hat, i0_hat)` feeds the reference calculator; the
/// actual pair enters the plant. All values in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostParams {
    pub l: f64,
    pub c: f64,
    pub r: f64,
    pub g: f64,
    pub v0: f64,
    pub g0_hat: f64,
    pub g0_actual: f64,
    pub i0_hat: f64,
    pub i0_actual: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for BoostParams {
    /// The lightly damped 380 V / 278 V benchmark converter.
    fn default() -> Self {
        Self {
            l: 1.12e-3,
            c: 6.8e-3,
            r: 10e-3,
            g: 50e-3,
            v0: 278.0,
            g0_hat: 40e-3,
            g0_actual: 40e-3,
            i0_hat: 20.0,
            i0_actual: 20.0,
            u_min: 0.1,
            u_max: 0.9,
        }
    }
}

/// Coefficients of one instance of the scalar boost power flow
/// `-R i^2 + v0 i - (G + G0) v^2 - i0 v = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostFlow {
    pub r: f64,
    pub g_shunt: f64,
    pub v0: f64,
    pub i0: f64,
}

impl BoostFlow {
    /// Inductor current sustaining the demanded capacitor voltage.
    ///
    /// The quadratic has two positive roots; the low-current root is the
    /// physical operating branch (lower conduction losses) and is the one
    /// consistent with modulation indices well inside (0, 1).
    pub fn solve(&self, v_c_star: f64) -> Result<f64, EquilibriumError> {
        // R i^2 - v0 i + q = 0 with q = (G + G0) v^2 + i0 v
        let q = self.g_shunt * v_c_star * v_c_star + self.i0 * v_c_star;
        let disc = self.v0 * self.v0 - 4.0 * self.r * q;
        if disc < 0.0 {
            return Err(EquilibriumError::Infeasible { discriminant: disc });
        }
        // low root, evaluated without cancellation
        let i = 2.0 * q / (self.v0 + disc.sqrt());
        let residual = (-self.r * i * i + self.v0 * i - q).abs();
        if residual > RESIDUAL_TOL {
            return Err(EquilibriumError::ResidualTooLarge { residual, tol: RESIDUAL_TOL });
        }
        Ok(i)
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("L", self.l),
            ("C", self.c),
            ("R", self.r),
            ("G", self.g),
            ("v0", self.v0),
            ("G0_hat", self.g0_hat),
            ("G0_actual", self.g0_actual),
            ("i0_hat", self.i0_hat),
            ("i0_actual", self.i0_actual),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("boost parameter {name} must be positive, got {v}"));
            }
        }
        if !(0.0 <= self.u_min && self.u_min < self.u_max && self.u_max <= 1.0) {
            return Err(format!(
                "boost modulation bounds need 0 <= u_min < u_max <= 1, got [{}, {}]",
                self.u_min, self.u_max
            ));
        }
        Ok(())
    }

    fn build(&self, g0: f64, i0: f64) -> Result<PhSystem, crate::error::PhsError> {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / self.l, 1.0 / self.c]));
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![self.r, self.g + g0]));
        let j0 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let j1 = -&j0;
        let e = DVector::from_vec(vec![self.v0, -i0]);
        PhSystem::new(q, r, j0, vec![j1], e)
    }

    /// Plant model with the actual load.
    pub fn build_actual(&self) -> Result<PhSystem, crate::error::PhsError> {
        self.build(self.g0_actual, self.i0_actual)
    }

    /// Twin model with the estimated load, used by the reference calculator.
    pub fn build_estimated(&self) -> Result<PhSystem, crate::error::PhsError> {
        self.build(self.g0_hat, self.i0_hat)
    }

    /// Energy state from co-energy values `(iL, vC)`.
    pub fn state_from_coenergy(&self, i_l: f64, v_c: f64) -> State {
        DVector::from_vec(vec![self.l * i_l, self.c * v_c])
    }

    /// Co-energy values `(iL, vC)` of an energy state.
    pub fn coenergy_of(&self, x: &State) -> (f64, f64) {
        (x[0] / self.l, x[1] / self.c)
    }

    pub fn estimated_flow(&self) -> BoostFlow {
        BoostFlow { r: self.r, g_shunt: self.g + self.g0_hat, v0: self.v0, i0: self.i0_hat }
    }

    pub fn actual_flow(&self) -> BoostFlow {
        BoostFlow { r: self.r, g_shunt: self.g + self.g0_actual, v0: self.v0, i0: self.i0_actual }
    }

    /// Completes the demanded voltage into a reference pair `(x*, u*)` via
    /// the estimated power flow.
    pub fn reference_for_voltage(&self, v_c_star: f64) -> Result<(State, f64), EquilibriumError> {
        let i_star = self.estimated_flow().solve(v_c_star)?;
        let x_star = self.state_from_coenergy(i_star, v_c_star);
        let est = self.build_estimated()?;
        let u = equilibrium_control(&est, &x_star)?;
        debug_assert!(assignability_residual(&est, &x_star)? < RESIDUAL_TOL);
        Ok((x_star, u[0]))
    }
}
