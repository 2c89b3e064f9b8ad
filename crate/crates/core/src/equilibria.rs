//! Assignable equilibria, equilibrium controls and robustness scalars.
//!
//! An equilibrium `x_bar` is assignable when some constant input makes
//! `dx/dt = 0`, equivalently `g_perp(x_bar) f(x_bar) = 0`. For converters
//! whose input matrix has rank n-1 the annihilator is `x' Q` and the
//! condition collapses to the scalar power-flow equation
//! `-x' Q R Q x + E' Q x = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::EquilibriumError;
use crate::phs::{PhSystem, State};

/// Relative singular-value cutoff for pseudoinverses and rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// A state/control pair with its assignability residual.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub x_bar: State,
    pub u_bar: DVector<f64>,
    pub residual: f64,
}

impl EquilibriumPoint {
    /// Computes the equilibrium control and residual for a candidate state.
    pub fn new(sys: &PhSystem, x_bar: State) -> Result<Self, EquilibriumError> {
        let u_bar = equilibrium_control(sys, &x_bar)?;
        let residual = assignability_residual(sys, &x_bar)?;
        Ok(Self { x_bar, u_bar, residual })
    }
}

/// Dissipated power, net supplied power and the derived robustness scalars
/// evaluated at a reference state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowReport {
    /// `x*' Q R Q x*` in watt.
    pub p_loss: f64,
    /// `E' Q x*` in watt.
    pub p_net: f64,
    /// `p_net / p_loss`; under rank-(n-1) structure the closed loop settles
    /// at `gamma * x*`.
    pub gamma: f64,
    /// Per-unit steady-state deviation `|gamma - 1|`.
    pub delta_x: f64,
    /// False when `p_net <= 0`, in which case no stable closed-loop
    /// equilibrium exists on the reference ray.
    pub stable: bool,
}

/// Moore-Penrose left pseudoinverse with a relative rank cutoff.
///
/// Returns the pseudoinverse and the numerical rank.
pub fn pseudo_inverse(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize), EquilibriumError> {
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|_| EquilibriumError::RankDeficient { rank: 0, m: g.ncols() })?;
    Ok((pinv, rank))
}

/// Equilibrium control `u(x_bar) = -g^+(x_bar) f(x_bar)`.
///
/// Errors when `g(x_bar)` loses column rank (for instance at `x_bar = 0`).
pub fn equilibrium_control(sys: &PhSystem, x_bar: &State) -> Result<DVector<f64>, EquilibriumError> {
    let g = sys.input_matrix(x_bar)?;
    let (pinv, rank) = pseudo_inverse(&g)?;
    if rank < sys.input_dim() {
        return Err(EquilibriumError::RankDeficient { rank, m: sys.input_dim() });
    }
    Ok(-(&pinv * sys.drift(x_bar)?))
}

/// Generic rank of the input matrix, probed at a fixed nondegenerate state.
///
/// `g(x)` is linear in `x`, so its rank is maximal on a dense open set; an
/// irrational-mix probe avoids the accidental degeneracies of special points
/// such as `x = 0`.
pub fn generic_input_rank(sys: &PhSystem) -> usize {
    let n = sys.state_dim();
    let probe = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * std::f64::consts::SQRT_2.fract());
    let g = sys.input_matrix(&probe).expect("probe dimension");
    let svd = g.svd(false, false);
    let smax = svd.singular_values.max();
    let tol = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    svd.singular_values.iter().filter(|s| **s > tol).count()
}

/// Distance of `x` from the set of assignable equilibria.
///
/// For converters whose input matrix has generic rank n-1 this is the
/// absolute power-flow defect `|-x' Q R Q x + E' Q x|` in watt; otherwise
/// the norm of the drift component outside the range of `g(x)`.
pub fn assignability_residual(sys: &PhSystem, x: &State) -> Result<f64, EquilibriumError> {
    let g = sys.input_matrix(x)?;
    let f = sys.drift(x)?;
    if generic_input_rank(sys) == sys.state_dim() - 1 {
        let z = sys.coenergy(x)?;
        let p_loss = z.dot(&(sys.r() * &z));
        let p_net = z.dot(sys.e());
        Ok((-p_loss + p_net).abs())
    } else {
        let (pinv, _) = pseudo_inverse(&g)?;
        let projected = &g * (&pinv * &f);
        Ok((f - projected).norm())
    }
}

/// Power-flow report for a (possibly misestimated) reference against the
/// actual system.
///
/// `sys_actual` carries the true dissipation and sources; `x_star` typically
/// comes from the estimated power flow, so `gamma` quantifies how far the
/// closed loop will settle from the reference ray.
pub fn gamma(sys_actual: &PhSystem, x_star: &State) -> Result<PowerFlowReport, EquilibriumError> {
    let z = sys_actual.coenergy(x_star)?;
    let p_loss = z.dot(&(sys_actual.r() * &z));
    if p_loss <= 0.0 {
        return Err(EquilibriumError::ZeroReference);
    }
    let p_net = z.dot(sys_actual.e());
    let gamma = p_net / p_loss;
    Ok(PowerFlowReport {
        p_loss,
        p_net,
        gamma,
        delta_x: (gamma - 1.0).abs(),
        stable: p_net > 0.0,
    })
}

/// Coefficients of the scalar zero dynamics
/// `H(x*) dzeta/dt = -P_loss(x*) zeta + P_net(x*)`, whose equilibrium is
/// `zeta = gamma`.
pub fn zero_dynamics_coeffs(
    sys: &PhSystem,
    x_star: &State,
) -> Result<(f64, f64, f64), EquilibriumError> {
    let report = gamma(sys, x_star)?;
    let h_star = sys.hamiltonian(x_star)?;
    Ok((h_star, report.p_loss, report.p_net))
}

/// True when the equilibrium control that sustains `gamma * x*` lies inside
/// the componentwise input box.
pub fn input_feasibility(
    sys: &PhSystem,
    gamma: f64,
    x_star: &State,
    u_min: &DVector<f64>,
    u_max: &DVector<f64>,
) -> Result<bool, EquilibriumError> {
    let u = equilibrium_control(sys, &(gamma * x_star))?;
    Ok(u
        .iter()
        .zip(u_min.iter().zip(u_max.iter()))
        .all(|(ui, (lo, hi))| *lo <= *ui && *ui <= *hi))
}
