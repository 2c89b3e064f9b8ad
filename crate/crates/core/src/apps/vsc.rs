//! Two-level voltage source converter in single-terminal HVDC configuration.
//!
//! The dq-frame terminal, with modulation `(u_d, u_q)` and a stiff ac grid
//! voltage `V_d`:
//!
//! ```text
//! L did/dt = -R id - L w iq + u_d v1 - V_d
//! L diq/dt =  L w id - R iq + u_q v1
//! C dv1/dt = -u_d id - u_q iq - G v1 + i0,     i0 = sum(iT)
//! ```
//!
//! plus a dc transmission line of three parallel RL branches to a voltage
//! source `V2` at the remote terminal:
//!
//! ```text
//! L_Tk diTk/dt = -R_Tk iTk + (V2 - v1)
//! ```
//!
//! State ordering: `(phi_d, phi_q, q1, phi_T1, phi_T2, phi_T3)`. Only `V2` is
//! uncertain; its estimate `V2_hat` defines the reference power flow. The
//! modulation vector lives in the square `[-2/3, 2/3]^2` imposed by the dq
//! transformation.

use nalgebra::{DMatrix, DVector};

use crate::equilibria::{assignability_residual, equilibrium_control, PowerFlowReport};
use crate::error::EquilibriumError;
use crate::phs::{PhSystem, State};

/// Absolute residual accepted from the VSC power-flow solver (MW-scale system).
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Per-channel modulation bound from the dq transformation.
pub const U_BOUND: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VscParams {
    pub l: f64,
    pub c: f64,
    pub r: f64,
    pub g: f64,
    /// Grid angular frequency in rad/s.
    pub omega: f64,
    /// Direct component of the ac grid voltage, volt.
    pub v_d: f64,
    pub v2_hat: f64,
    pub v2_actual: f64,
    pub r_t: [f64; 3],
    pub l_t: [f64; 3],
    pub u_bound: f64,
}

impl Default for VscParams {
    /// The 1.2 GW point-to-point HVDC benchmark.
    fn default() -> Self {
        Self {
            l: 78.2e-3,
            c: 37.32e-6,
            r: 0.65,
            g: 0.001e-3,
            omega: 2.0 * std::f64::consts::PI * 50.0,
            v_d: 310.27e3,
            v2_hat: 775.0e3,
            v2_actual: 775.0e3,
            r_t: [530.96, 24.35, 3.20],
            l_t: [120.3e-3, 60.4e-3, 559.6e-3],
            u_bound: U_BOUND,
        }
    }
}

/// Report of the VSC robustness analysis: the generic power-flow scalars plus
/// the approximate per-unit deviation `|V2 - V2_hat| / v1*` that neglects
/// converter losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VscGammaReport {
    pub base: PowerFlowReport,
    pub delta_x_approx: f64,
}

fn elementary_skew(n: usize, i: usize, k: usize, scale: f64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(n, n);
    j[(i, k)] = scale;
    j[(k, i)] = -scale;
    j
}

impl VscParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("L", self.l),
            ("C", self.c),
            ("R", self.r),
            ("G", self.g),
            ("omega", self.omega),
            ("V_d", self.v_d),
            ("V2_hat", self.v2_hat),
            ("V2_actual", self.v2_actual),
            ("u_bound", self.u_bound),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("vsc parameter {name} must be positive, got {v}"));
            }
        }
        for k in 0..3 {
            if self.r_t[k].is_nan() || self.r_t[k] <= 0.0 || self.l_t[k].is_nan() || self.l_t[k] <= 0.0 {
                return Err(format!("vsc line branch {} needs positive R_T and L_T", k + 1));
            }
        }
        if self.u_bound > 1.0 {
            return Err(format!("vsc modulation bound must not exceed 1, got {}", self.u_bound));
        }
        Ok(())
    }

    /// Sum of the line branch conductances `1' G_T 1` in siemens.
    pub fn sigma(&self) -> f64 {
        self.r_t.iter().map(|r| 1.0 / r).sum()
    }

    fn build(&self, v2: f64) -> Result<PhSystem, crate::error::PhsError> {
        let n = 6;
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0 / self.l,
            1.0 / self.l,
            1.0 / self.c,
            1.0 / self.l_t[0],
            1.0 / self.l_t[1],
            1.0 / self.l_t[2],
        ]));
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![
            self.r,
            self.r,
            self.g,
            self.r_t[0],
            self.r_t[1],
            self.r_t[2],
        ]));
        // rotation Lw between the dq fluxes, plus the capacitor/line coupling
        // oriented so the charge row collects +sum(iT) and each line row sees
        // -v1, matching the circuit equations above
        let j0 = elementary_skew(n, 1, 0, self.l * self.omega)
            + elementary_skew(n, 2, 3, 1.0)
            + elementary_skew(n, 2, 4, 1.0)
            + elementary_skew(n, 2, 5, 1.0);
        let j1 = elementary_skew(n, 0, 2, 1.0);
        let j2 = elementary_skew(n, 1, 2, 1.0);
        // the ac source opposes the direct current; the dc source feeds the line
        let e = DVector::from_vec(vec![-self.v_d, 0.0, 0.0, v2, v2, v2]);
        PhSystem::new(q, r, j0, vec![j1, j2], e)
    }

    pub fn build_actual(&self) -> Result<PhSystem, crate::error::PhsError> {
        self.build(self.v2_actual)
    }

    pub fn build_estimated(&self) -> Result<PhSystem, crate::error::PhsError> {
        self.build(self.v2_hat)
    }

    pub fn state_from_coenergy(&self, i_d: f64, i_q: f64, v1: f64, i_t: [f64; 3]) -> State {
        DVector::from_vec(vec![
            self.l * i_d,
            self.l * i_q,
            self.c * v1,
            self.l_t[0] * i_t[0],
            self.l_t[1] * i_t[1],
            self.l_t[2] * i_t[2],
        ])
    }

    /// Co-energy `(id, iq, v1, iT1, iT2, iT3)` of an energy state.
    pub fn coenergy_of(&self, x: &State) -> [f64; 6] {
        [
            x[0] / self.l,
            x[1] / self.l,
            x[2] / self.c,
            x[3] / self.l_t[0],
            x[4] / self.l_t[1],
            x[5] / self.l_t[2],
        ]
    }

    /// Direct or quadrature current reference from a power demand, using the
    /// three-phase dq convention `P = (3/2) V_d i`.
    pub fn current_for_power(&self, p_watts: f64) -> f64 {
        2.0 * p_watts / (3.0 * self.v_d)
    }

    /// Terminal voltage and line currents sustaining the demanded dq currents
    /// under the estimated remote voltage.
    ///
    /// The quadratic in `v1` is solved on the high-voltage branch (the root
    /// nearest `V2_hat`); HVDC terminals operate near nominal voltage.
    pub fn solve_powerflow(
        &self,
        i_d_star: f64,
        i_q_star: f64,
    ) -> Result<(f64, [f64; 3]), EquilibriumError> {
        let sigma = self.sigma();
        // (G + sigma) v^2 - sigma V2_hat v + [R (id^2 + iq^2) + V_d id] = 0
        let a = self.g + sigma;
        let b = -sigma * self.v2_hat;
        let cc = self.r * (i_d_star * i_d_star + i_q_star * i_q_star) + self.v_d * i_d_star;
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            return Err(EquilibriumError::Infeasible { discriminant: disc });
        }
        let v1 = (-b + disc.sqrt()) / (2.0 * a);
        let i_t = [
            (self.v2_hat - v1) / self.r_t[0],
            (self.v2_hat - v1) / self.r_t[1],
            (self.v2_hat - v1) / self.r_t[2],
        ];
        // roundoff guard on the scalar power flow, relative to its MW scale
        let residual = (-self.r * (i_d_star * i_d_star + i_q_star * i_q_star)
            - a * v1 * v1
            - self.v_d * i_d_star
            + sigma * v1 * self.v2_hat)
            .abs();
        let scale = a * v1 * v1 + (sigma * v1 * self.v2_hat).abs() + cc.abs() + 1.0;
        if residual > 1e-12 * scale {
            return Err(EquilibriumError::ResidualTooLarge { residual, tol: 1e-12 * scale });
        }
        Ok((v1, i_t))
    }

    /// Completes a dq current demand into `(x*, u*)` via the estimated model.
    pub fn reference_for_currents(
        &self,
        i_d_star: f64,
        i_q_star: f64,
    ) -> Result<(State, DVector<f64>), EquilibriumError> {
        let (v1, i_t) = self.solve_powerflow(i_d_star, i_q_star)?;
        let x_star = self.state_from_coenergy(i_d_star, i_q_star, v1, i_t);
        let est = self.build_estimated()?;
        let u = equilibrium_control(&est, &x_star)?;
        debug_assert!(assignability_residual(&est, &x_star)? < RESIDUAL_TOL);
        Ok((x_star, u))
    }

    /// Robustness report for a reference `x*` under the actual remote voltage.
    ///
    /// `gamma` scales the `(id, iq, v1)` components of the closed-loop steady
    /// state; the line currents settle wherever the actual line equilibrium
    /// puts them.
    pub fn gamma_report(&self, x_star: &State) -> Result<VscGammaReport, EquilibriumError> {
        let z = self.coenergy_of(x_star);
        let (i_d, i_q, v1) = (z[0], z[1], z[2]);
        if v1 == 0.0 && i_d == 0.0 && i_q == 0.0 {
            return Err(EquilibriumError::ZeroReference);
        }
        let sigma = self.sigma();
        let p_loss = self.r * (i_d * i_d + i_q * i_q) + (self.g + sigma) * v1 * v1;
        let p_net = -self.v_d * i_d + sigma * v1 * self.v2_actual;
        let gamma = p_net / p_loss;
        let base = PowerFlowReport {
            p_loss,
            p_net,
            gamma,
            delta_x: (gamma - 1.0).abs(),
            stable: p_net > 0.0,
        };
        Ok(VscGammaReport { base, delta_x_approx: (self.v2_actual - self.v2_hat).abs() / v1 })
    }

    /// Largest underestimation of the remote voltage that the analysis
    /// certifies as stable at this reference, in volt.
    ///
    /// This lossless-line bound is conservative: the exact sign flip of
    /// `gamma` happens at `voltage_margin + v1*`.
    pub fn voltage_margin(&self, x_star: &State) -> f64 {
        let z = self.coenergy_of(x_star);
        let (i_d, i_q, v1) = (z[0], z[1], z[2]);
        let sigma = self.sigma();
        (self.r * (i_d * i_d + i_q * i_q) + self.g * v1 * v1) / (sigma * v1)
    }
}
