//! Stability certificates for the closed loop, all reduced to eigenvalue
//! checks of explicitly assembled matrices.
//!
//! * PID: a cross-term weight `eps > 0` is searched so that both the energy
//!   form `Q_eps` and the decay form `D_eps` are positive definite; the pair
//!   certifies the exponential rate `alpha_eps = 2 min_eig(D_eps) /
//!   max_eig(Q_eps)` in `V_eps(t) <= V_eps(0) exp(-alpha_eps t)`.
//! * PLID: three conditions (`R + K_P' > 0`, `Q^-1 + K_D' > 0` and the
//!   leakage dominating the reference-mismatch cross term) certify global
//!   exponential stability with rate `alpha_L`.
//! * mPLID: the same structure with the monotone-map derivatives `M1`, `M2`
//!   folded into the gain products.
//!
//! Certificates are deterministic: identical inputs give bit-identical
//! margins.

use nalgebra::{DMatrix, DVector};

use crate::controllers::{ControllerConfig, Monotone, Variant};
use crate::equilibria::{assignability_residual, equilibrium_control};
use crate::error::StabilityError;
use crate::phs::{PhSystem, State};

/// Residual (relative to the dissipated power, floored at 1 W) below which a
/// state is accepted as assignable.
pub const ASSIGNABLE_TOL: f64 = 1e-6;

/// A named positivity condition and its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMargin {
    pub name: &'static str,
    pub margin: f64,
}

/// Outcome of one certificate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub variant: Variant,
    pub satisfied: bool,
    pub margins: Vec<ConditionMargin>,
    /// Cross-term weight of the PID energy function (zero for the others).
    pub epsilon: f64,
    /// Certified exponential rate in 1/s (zero when nothing is certified;
    /// the monotone certificate does not come with a rate).
    pub alpha: f64,
}

fn sym_eig_bounds(mat: &DMatrix<f64>) -> (f64, f64) {
    let sym = 0.5 * (mat + mat.transpose());
    let eig = sym.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

fn positive(min_eig: f64, max_eig: f64) -> bool {
    min_eig > 1e-12 * max_eig.abs().max(f64::MIN_POSITIVE)
}

/// `[[a, b], [b', c]]` with `a` n-by-n, `b` n-by-m, `c` m-by-m.
fn sym_block2(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), c.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, m)).copy_from(b);
    out.view_mut((n, 0), (m, n)).copy_from(&b.transpose());
    out.view_mut((n, n), (m, m)).copy_from(c);
    out
}

fn bdiag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

fn sym_sqrt(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = mat.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

fn check_assignable(sys: &PhSystem, x_bar: &State) -> Result<(), StabilityError> {
    let residual = assignability_residual(sys, x_bar)?;
    let z = sys.coenergy(x_bar).map_err(crate::error::EquilibriumError::from)?;
    let scale = z.dot(&(sys.r() * &z)).abs().max(1.0);
    let tol = ASSIGNABLE_TOL * scale;
    if residual > tol {
        return Err(StabilityError::NotAssignable { residual, tol });
    }
    Ok(())
}

fn vertices(lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = lo.len();
    (0..(1usize << m))
        .map(|mask| DVector::from_fn(m, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }))
        .collect()
}

struct PidWorkspace<'a> {
    sys: &'a PhSystem,
    cfg: &'a ControllerConfig,
    q_inv: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    g_bar: DMatrix<f64>,
    gkd: DMatrix<f64>,   // g K_D g'
    gki: DMatrix<f64>,   // g K_I g'
    gkp: DMatrix<f64>,   // g K_P g'
    b_mat: DMatrix<f64>, // (Q^-1 + g K_D g')^-1
    ki_inv: DMatrix<f64>,
    u_vertices: Vec<DVector<f64>>,
}

struct PidConditions {
    q_eps_min: f64,
    d_eps_min: f64,
    energy_shape: f64, // 1 - max_eig(Q^1/2 g (eps^2 K_I - K_D) g' Q^1/2)
    decay_shape: f64,  // worst-vertex min_eig of the scalar decay bound
    alpha: f64,
}

impl<'a> PidWorkspace<'a> {
    fn new(
        sys: &'a PhSystem,
        cfg: &'a ControllerConfig,
        x_bar: &State,
        u_lo: &DVector<f64>,
        u_hi: &DVector<f64>,
    ) -> Result<Self, StabilityError> {
        check_assignable(sys, x_bar)?;
        let g_bar = sys
            .input_matrix(x_bar)
            .map_err(crate::error::EquilibriumError::from)?;
        let q_inv = sys.q().clone().try_inverse().expect("Q is positive definite");
        let gkd = &g_bar * &cfg.gains.k_d * g_bar.transpose();
        let gki = &g_bar * &cfg.gains.k_i * g_bar.transpose();
        let gkp = &g_bar * &cfg.gains.k_p * g_bar.transpose();
        let b_mat = (&q_inv + &gkd)
            .try_inverse()
            .expect("Q^-1 + g K_D g' is positive definite");
        let ki_inv = cfg
            .gains
            .k_i
            .clone()
            .try_inverse()
            .expect("K_I is positive definite");
        Ok(Self {
            sys,
            cfg,
            q_sqrt: sym_sqrt(sys.q()),
            q_inv,
            g_bar,
            gkd,
            gki,
            gkp,
            b_mat,
            ki_inv,
            u_vertices: vertices(u_lo, u_hi),
        })
    }

    fn conditions_at(&self, eps: f64) -> PidConditions {
        // energy form [[Q^-1 + g K_D g', -eps g], [-eps g', K_I^-1]]
        let q_eps = sym_block2(&(&self.q_inv + &self.gkd), &(-eps * &self.g_bar), &self.ki_inv);
        let (q_eps_min, q_eps_max) = sym_eig_bounds(&q_eps);

        // equivalent scalar form of positivity of the energy matrix
        let mid = &self.g_bar
            * (eps * eps * &self.cfg.gains.k_i - &self.cfg.gains.k_d)
            * self.g_bar.transpose();
        let shaped = &self.q_sqrt * mid * &self.q_sqrt;
        let (_, shaped_max) = sym_eig_bounds(&shaped);
        let energy_shape = 1.0 - shaped_max;

        // decay form, worst case over the input box vertices
        let gt_b_g = self.g_bar.transpose() * &self.b_mat * &self.g_bar;
        let gt_b_g_inv = gt_b_g
            .clone()
            .try_inverse()
            .expect("g has full column rank at x_bar");
        let r_p = self.sys.r() + &self.gkp;
        let mut d_eps_min = f64::INFINITY;
        let mut decay_shape = f64::INFINITY;
        for u in &self.u_vertices {
            let mut b_u = self.sys.j0().clone();
            for (i, j) in self.sys.ji().iter().enumerate() {
                b_u += j * u[i];
            }
            b_u -= self.sys.r();
            b_u -= &self.gkp;
            let bt_b_g = b_u.transpose() * &self.b_mat * &self.g_bar; // n x m
            let d11 = self.sys.r()
                + &self.g_bar
                    * (&self.cfg.gains.k_p - eps * &self.cfg.gains.k_i)
                    * self.g_bar.transpose();
            let d12 = 0.5 * eps * &bt_b_g;
            let d22 = eps * &gt_b_g;
            let d_eps = sym_block2(&d11, &d12, &d22);
            let (dmin, _) = sym_eig_bounds(&d_eps);
            d_eps_min = d_eps_min.min(dmin);

            // scalar form: R + g K_P g' - eps [g K_I g' + (1/4) B(u)] > 0
            let cross = &bt_b_g * &gt_b_g_inv * bt_b_g.transpose();
            let lhs = &r_p - eps * (&self.gki + 0.25 * cross);
            let (smin, _) = sym_eig_bounds(&lhs);
            decay_shape = decay_shape.min(smin);
        }

        let q_ok = positive(q_eps_min, q_eps_max);
        let d_ok = d_eps_min > 1e-12 * q_eps_max.abs().max(f64::MIN_POSITIVE);
        let alpha = if q_ok && d_ok { 2.0 * d_eps_min / q_eps_max } else { 0.0 };
        PidConditions { q_eps_min, d_eps_min, energy_shape, decay_shape, alpha }
    }
}

fn certificate_from_conditions(eps: f64, c: &PidConditions) -> StabilityCertificate {
    let satisfied = c.alpha > 0.0;
    StabilityCertificate {
        variant: Variant::Pid,
        satisfied,
        margins: vec![
            ConditionMargin { name: "energy form positive definite", margin: c.q_eps_min },
            ConditionMargin {
                name: "decay form positive definite (worst input vertex)",
                margin: c.d_eps_min,
            },
            ConditionMargin { name: "energy shape bound", margin: c.energy_shape },
            ConditionMargin {
                name: "decay shape bound (worst input vertex)",
                margin: c.decay_shape,
            },
        ],
        epsilon: eps,
        alpha: c.alpha,
    }
}

/// PID certificate at a fixed cross-term weight; `pid_certificate` searches
/// the weight automatically.
pub fn pid_certificate_at_epsilon(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_bar: &State,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
    eps: f64,
) -> Result<StabilityCertificate, StabilityError> {
    let ws = PidWorkspace::new(sys, cfg, x_bar, u_lo, u_hi)?;
    let c = ws.conditions_at(eps);
    Ok(certificate_from_conditions(eps, &c))
}

/// Searches the cross-term weight and returns the PID certificate that
/// maximizes the certified rate.
///
/// A 40-point logarithmic grid over [1e-9, 1] is refined by a golden-section
/// pass around the best point; the decay form is evaluated at every vertex
/// of the input box `[u_lo, u_hi]`, where its quadratic bound is extremal.
pub fn pid_certificate(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_bar: &State,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
) -> Result<StabilityCertificate, StabilityError> {
    let ws = PidWorkspace::new(sys, cfg, x_bar, u_lo, u_hi)?;
    let grid: Vec<f64> = (0..40)
        .map(|k| 10f64.powf(-9.0 + 9.0 * (k as f64) / 39.0))
        .collect();
    let mut best_idx = 0;
    let mut best_alpha = f64::NEG_INFINITY;
    for (i, eps) in grid.iter().enumerate() {
        let c = ws.conditions_at(*eps);
        if c.alpha > best_alpha {
            best_alpha = c.alpha;
            best_idx = i;
        }
    }
    let mut eps_best = grid[best_idx];
    if best_alpha > 0.0 {
        // golden-section refinement on log(eps) inside the bracketing cells
        let lo = grid[best_idx.saturating_sub(1)].ln();
        let hi = grid[(best_idx + 1).min(grid.len() - 1)].ln();
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut f1 = ws.conditions_at(x1.exp()).alpha;
        let mut f2 = ws.conditions_at(x2.exp()).alpha;
        for _ in 0..60 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = ws.conditions_at(x2.exp()).alpha;
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = ws.conditions_at(x1.exp()).alpha;
            }
        }
        let eps_ref = (0.5 * (a + b)).exp();
        if ws.conditions_at(eps_ref).alpha >= best_alpha {
            eps_best = eps_ref;
        }
    }
    let c = ws.conditions_at(eps_best);
    Ok(certificate_from_conditions(eps_best, &c))
}

/// PLID certificate: `R + K_P' > 0`, `Q^-1 + K_D' > 0` and
/// `K_L > (1/4) g(x* - x_bar)' (R + K_P')^-1 g(x* - x_bar)`, with the rate
/// `alpha_L = 2 min_eig(bdiag(R + K_P', K_L)) /
/// max_eig(bdiag(Q^-1 + K_D', K_I))`.
pub fn plid_certificate(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_bar: &State,
) -> Result<StabilityCertificate, StabilityError> {
    check_assignable(sys, x_bar)?;
    let k_l = cfg.gains.k_l.clone().ok_or(StabilityError::MissingLeakage)?;
    let g_bar = sys
        .input_matrix(x_bar)
        .map_err(crate::error::EquilibriumError::from)?;
    let g_star = cfg.g_star(sys);
    let q_inv = sys.q().clone().try_inverse().expect("Q positive definite");

    let kp_sym = 0.5
        * (&g_bar * &cfg.gains.k_p * g_star.transpose()
            + &g_star * &cfg.gains.k_p * g_bar.transpose());
    let kd_sym = 0.5
        * (&g_bar * &cfg.gains.k_d * g_star.transpose()
            + &g_star * &cfg.gains.k_d * g_bar.transpose());

    let r_kp = sys.r() + &kp_sym;
    let (m1, m1_max) = sym_eig_bounds(&r_kp);
    let qd = &q_inv + &kd_sym;
    let (m2, m2_max) = sym_eig_bounds(&qd);

    // g is linear in the state, so g(x* - x_bar) = g(x*) - g(x_bar)
    let g_diff = &g_star - &g_bar;
    let r_kp_inv = r_kp
        .clone()
        .try_inverse()
        .ok_or(StabilityError::NotAssignable { residual: f64::INFINITY, tol: 0.0 })?;
    let cross = 0.25 * g_diff.transpose() * r_kp_inv * &g_diff;
    let leak = &k_l - cross;
    let (m3, m3_max) = sym_eig_bounds(&leak);

    let d_block = bdiag(&r_kp, &k_l);
    let q_block = bdiag(&qd, &cfg.gains.k_i);
    let (d_min, _) = sym_eig_bounds(&d_block);
    let (_, q_max) = sym_eig_bounds(&q_block);

    let satisfied = positive(m1, m1_max) && positive(m2, m2_max) && positive(m3, m3_max);
    let alpha = if satisfied { 2.0 * d_min / q_max } else { 0.0 };
    Ok(StabilityCertificate {
        variant: Variant::Plid,
        satisfied,
        margins: vec![
            ConditionMargin { name: "R + K_P' positive definite", margin: m1 },
            ConditionMargin { name: "Q^-1 + K_D' positive definite", margin: m2 },
            ConditionMargin { name: "leakage dominates the reference mismatch", margin: m3 },
        ],
        epsilon: 0.0,
        alpha,
    })
}

/// Recovers the equilibrium integrator state of the monotone controller from
/// the output equation: `K_I xc_bar = w^-1(u(x_bar)) + K_P g*' Q x_bar`.
pub fn monotone_equilibrium_xc(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_bar: &State,
) -> Result<DVector<f64>, StabilityError> {
    let map = cfg.monotone.as_ref().ok_or(StabilityError::MissingMonotoneMap)?;
    let u_bar = equilibrium_control(sys, x_bar)?;
    let v_bar = map.inverse(&u_bar)?;
    let g_star = cfg.g_star(sys);
    let y_bar = g_star.transpose() * (sys.q() * x_bar);
    let rhs = v_bar + &cfg.gains.k_p * y_bar;
    cfg.gains
        .k_i
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(StabilityError::Controller(crate::error::ControllerError::SingularLoop))
}

/// Monotone certificate with the equilibrium integrator state derived from
/// the output equation.
pub fn mplid_certificate(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_bar: &State,
) -> Result<StabilityCertificate, StabilityError> {
    let x_c_bar = monotone_equilibrium_xc(sys, cfg, x_bar)?;
    mplid_certificate_with_xc(sys, cfg, x_bar, &x_c_bar)
}

/// Monotone certificate at an explicitly known equilibrium pair, e.g. one
/// measured from a converged simulation.
///
/// Checks `R + K_P~ > 0`, `Q^-1 + K_D~ > 0` and `M2 K_L M2 >
/// (1/4) D' (R + K_P~)^-1 D` with `D = g(x*) M2 - g(x_bar) M1`, where `M1`
/// and `M2` are the map derivatives at the equilibrium output and integrator
/// arguments. A zero leakage (mPID) is admitted; the third condition then
/// holds only under exact parameter knowledge.
pub fn mplid_certificate_with_xc(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_bar: &State,
    x_c_bar: &DVector<f64>,
) -> Result<StabilityCertificate, StabilityError> {
    check_assignable(sys, x_bar)?;
    let map = cfg.monotone.as_ref().ok_or(StabilityError::MissingMonotoneMap)?;
    let m = sys.input_dim();
    let k_l = cfg.gains.k_l.clone().unwrap_or_else(|| DMatrix::zeros(m, m));
    let g_bar = sys
        .input_matrix(x_bar)
        .map_err(crate::error::EquilibriumError::from)?;
    let g_star = cfg.g_star(sys);
    let q_inv = sys.q().clone().try_inverse().expect("Q positive definite");

    let y_bar = g_star.transpose() * (sys.q() * x_bar);
    let ki_xc = &cfg.gains.k_i * x_c_bar;
    let v_bar = -(&cfg.gains.k_p * &y_bar) + &ki_xc;
    let m1 = DMatrix::from_diagonal(&map.derivative(&v_bar));
    let m2_diag = map.derivative(&ki_xc);
    let m2 = DMatrix::from_diagonal(&m2_diag);
    let m2_min = m2_diag.min();
    if m2_min <= 0.0 {
        return Err(StabilityError::SingularM2 { min_entry: m2_min });
    }

    let kp_bar = 0.5
        * (&g_bar * &m1 * &cfg.gains.k_p * g_star.transpose()
            + &g_star * &cfg.gains.k_p * &m1 * g_bar.transpose());
    let kd_bar = 0.5
        * (&g_bar * &m1 * &cfg.gains.k_d * g_star.transpose()
            + &g_star * &cfg.gains.k_d * &m1 * g_bar.transpose());

    let r_kp = sys.r() + &kp_bar;
    let (c1, c1_max) = sym_eig_bounds(&r_kp);
    let qd = &q_inv + &kd_bar;
    let (c2, c2_max) = sym_eig_bounds(&qd);

    let delta = &g_star * &m2 - &g_bar * &m1; // n x m
    let r_kp_inv = r_kp
        .clone()
        .try_inverse()
        .ok_or(StabilityError::NotAssignable { residual: f64::INFINITY, tol: 0.0 })?;
    let cross = 0.25 * delta.transpose() * r_kp_inv * &delta;
    let leak = &m2 * &k_l * &m2 - cross;
    let (c3, c3_max) = sym_eig_bounds(&leak);

    let satisfied = positive(c1, c1_max) && positive(c2, c2_max) && positive(c3, c3_max);
    Ok(StabilityCertificate {
        variant: if cfg.gains.k_l.is_some() { Variant::MPlid } else { Variant::MPid },
        satisfied,
        margins: vec![
            ConditionMargin { name: "R + K_P~ positive definite", margin: c1 },
            ConditionMargin { name: "Q^-1 + K_D~ positive definite", margin: c2 },
            ConditionMargin { name: "scaled leakage dominates the mismatch", margin: c3 },
        ],
        epsilon: 0.0,
        alpha: 0.0,
    })
}

/// An incremental energy function pinned to a closed-loop equilibrium,
/// evaluable along trajectories.
#[derive(Debug, Clone)]
pub struct Lyapunov {
    variant: Variant,
    q: DMatrix<f64>,
    x_bar: State,
    x_c_bar: DVector<f64>,
    k_i: DMatrix<f64>,
    epsilon: f64,
    /// Quadratic state weight beyond the inverse inertia: `g K_D g'` (PID),
    /// `sym(g K_D g*')` (PLID), `sym(g M1 K_D g*')` (mPLID).
    state_weight: DMatrix<f64>,
    /// `Q g_bar K_I` cross weight (PID only).
    cross: Option<DMatrix<f64>>,
    monotone: Option<(Monotone, DVector<f64>)>, // map plus diagonal of K_I
}

impl Lyapunov {
    /// Builds the energy function matching the configured variant at the
    /// closed-loop equilibrium `x_bar`; `epsilon` only enters the PID form.
    pub fn for_config(
        sys: &PhSystem,
        cfg: &ControllerConfig,
        x_bar: &State,
        epsilon: f64,
    ) -> Result<Self, StabilityError> {
        let q = sys.q().clone();
        let g_bar = sys
            .input_matrix(x_bar)
            .map_err(crate::error::EquilibriumError::from)?;
        let g_star = cfg.g_star(sys);
        let variant = cfg.variant();
        let (x_c_bar, state_weight, cross, monotone) = match variant {
            Variant::Pid => {
                let u_bar = equilibrium_control(sys, x_bar)?;
                let x_c_bar = cfg
                    .gains
                    .k_i
                    .clone()
                    .lu()
                    .solve(&u_bar)
                    .ok_or(StabilityError::Controller(
                        crate::error::ControllerError::SingularLoop,
                    ))?;
                let w = &g_bar * &cfg.gains.k_d * g_bar.transpose();
                let cross = &q * &g_bar * &cfg.gains.k_i;
                (x_c_bar, w, Some(cross), None)
            }
            Variant::Plid => {
                // output equation: K_I xc_bar = u(x_bar) + K_P g*' Q x_bar
                let u_bar = equilibrium_control(sys, x_bar)?;
                let y_bar = g_star.transpose() * (&q * x_bar);
                let rhs = u_bar + &cfg.gains.k_p * y_bar;
                let x_c_bar = cfg
                    .gains
                    .k_i
                    .clone()
                    .lu()
                    .solve(&rhs)
                    .ok_or(StabilityError::Controller(
                        crate::error::ControllerError::SingularLoop,
                    ))?;
                let w = 0.5
                    * (&g_bar * &cfg.gains.k_d * g_star.transpose()
                        + &g_star * &cfg.gains.k_d * g_bar.transpose());
                (x_c_bar, w, None, None)
            }
            Variant::MPid | Variant::MPlid => {
                let map = cfg.monotone.clone().ok_or(StabilityError::MissingMonotoneMap)?;
                let x_c_bar = monotone_equilibrium_xc(sys, cfg, x_bar)?;
                let ki_diag = cfg.gains.k_i.diagonal();
                let off = &cfg.gains.k_i - DMatrix::from_diagonal(&ki_diag);
                if off.iter().any(|v| *v != 0.0) {
                    return Err(StabilityError::NonDiagonalKi);
                }
                let y_bar = g_star.transpose() * (&q * x_bar);
                let v_bar = -(&cfg.gains.k_p * y_bar) + &cfg.gains.k_i * &x_c_bar;
                let m1 = DMatrix::from_diagonal(&map.derivative(&v_bar));
                let w = 0.5
                    * (&g_bar * &m1 * &cfg.gains.k_d * g_star.transpose()
                        + &g_star * &cfg.gains.k_d * &m1 * g_bar.transpose());
                (x_c_bar, w, None, Some((map, ki_diag)))
            }
        };
        Ok(Self {
            variant,
            q,
            x_bar: x_bar.clone(),
            x_c_bar,
            k_i: cfg.gains.k_i.clone(),
            epsilon,
            state_weight,
            cross,
            monotone,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn equilibrium(&self) -> (&State, &DVector<f64>) {
        (&self.x_bar, &self.x_c_bar)
    }

    /// Energy value at `(x, xc)` relative to the pinned equilibrium, joule.
    pub fn value(&self, x: &State, x_c: &DVector<f64>) -> f64 {
        let dx = x - &self.x_bar;
        let dxc = x_c - &self.x_c_bar;
        let qdx = &self.q * &dx;
        let mut v = 0.5 * dx.dot(&qdx) + 0.5 * qdx.dot(&(&self.state_weight * &qdx));
        match (&self.monotone, &self.cross) {
            (Some((map, ki_diag)), _) => {
                // path integral of the shifted map, one channel at a time
                for ch in 0..dxc.len() {
                    let k = ki_diag[ch];
                    let base = k * self.x_c_bar[ch];
                    let w0 = map.eval(&DVector::from_vec(vec![base]))[0];
                    let f = |sigma: f64| {
                        map.eval(&DVector::from_vec(vec![k * sigma + base]))[0] - w0
                    };
                    let tol = 1e-12 * k.abs().max(1.0) * dxc[ch].abs().max(1.0);
                    v += adaptive_simpson(&f, 0.0, dxc[ch], tol);
                }
            }
            (None, cross) => {
                v += 0.5 * dxc.dot(&(&self.k_i * &dxc));
                if let Some(c) = cross {
                    v -= self.epsilon * dx.dot(&(c * &dxc));
                }
            }
        }
        v
    }
}

/// Adaptive Simpson quadrature with an absolute tolerance; a reversed
/// interval (`b < a`) integrates with the usual signed convention.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (left, flm) = simpson(f, a, fa, m, fm);
        let (right, frm) = simpson(f, m, fm, b, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (whole, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, fm, tol.max(f64::MIN_POSITIVE), 40)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::boost::BoostParams;
    use crate::controllers::{ControllerConfig, Gains, MonotoneMap, MonotoneSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn boost_pid() -> (BoostParams, PhSystem, ControllerConfig, State) {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let gains = Gains::scalar(1e-6, 1e-4, 1e-7, None).unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::None).unwrap();
        (p, sys, cfg, x_star)
    }

    fn u_box() -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0]))
    }

    #[test]
    fn zero_epsilon_degenerates_to_the_nonstrict_certificate() {
        let (_, sys, cfg, x_star) = boost_pid();
        let (lo, hi) = u_box();
        let cert = pid_certificate_at_epsilon(&sys, &cfg, &x_star, &lo, &hi, 0.0).unwrap();
        assert_eq!(cert.alpha, 0.0);
        assert!(!cert.satisfied);
        // energy form stays positive definite; the decay form is only
        // semidefinite (its integrator block vanishes)
        assert!(cert.margins[0].margin > 0.0);
        assert!(cert.margins[1].margin.abs() < 1e-9);
    }

    #[test]
    fn benchmark_gains_certify_a_positive_rate() {
        let (_, sys, cfg, x_star) = boost_pid();
        let (lo, hi) = u_box();
        let cert = pid_certificate(&sys, &cfg, &x_star, &lo, &hi).unwrap();
        assert!(cert.satisfied, "margins: {:?}", cert.margins);
        assert!(cert.alpha > 0.0);
        assert!(cert.epsilon > 0.0 && cert.epsilon < 1.0);
        for m in &cert.margins {
            assert!(m.margin > 0.0, "{}: {}", m.name, m.margin);
        }
        // deterministic
        let again = pid_certificate(&sys, &cfg, &x_star, &lo, &hi).unwrap();
        assert_eq!(cert, again);
    }

    #[test]
    fn certificate_rejects_unassignable_points() {
        let (p, sys, cfg, _) = boost_pid();
        let off_circle = p.state_from_coenergy(10.0, 380.0);
        let (lo, hi) = u_box();
        let err = pid_certificate(&sys, &cfg, &off_circle, &lo, &hi).unwrap_err();
        assert!(matches!(err, StabilityError::NotAssignable { .. }));
    }

    #[test]
    fn rescaled_integral_gain_still_certifies() {
        let (p, sys, _, x_star) = boost_pid();
        let est = p.build_estimated().unwrap();
        let (lo, hi) = u_box();
        for scale in [0.2, 5.0] {
            let gains = Gains::scalar(1e-6, 1e-4 * scale, 1e-7, None).unwrap();
            let cfg =
                ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::None).unwrap();
            let cert = pid_certificate(&sys, &cfg, &x_star, &lo, &hi).unwrap();
            assert!(cert.satisfied, "scale {scale}: {:?}", cert.margins);
            assert!(cert.alpha > 0.0);
        }
    }

    #[test]
    fn plid_exact_knowledge_needs_only_positive_leakage() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::None).unwrap();
        let cert = plid_certificate(&sys, &cfg, &x_star).unwrap();
        assert!(cert.satisfied);
        // with x_bar = x*, the third condition is exactly K_L > 0
        assert_relative_eq!(cert.margins[2].margin, 5e8, max_relative = 1e-9);
        assert!(cert.alpha > 0.0);
    }

    #[test]
    fn plid_condition_reduces_to_the_scalar_bound_without_p_and_d() {
        let p = BoostParams { i0_actual: 40.0, ..Default::default() };
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::None).unwrap();

        // x_bar: an actual assignable point away from the reference
        let i_bar = p.actual_flow().solve(360.0).unwrap();
        let x_bar = p.state_from_coenergy(i_bar, 360.0);
        let cert = plid_certificate(&sys, &cfg, &x_bar).unwrap();

        // hand formula: K_L - (1/4)[(dv)^2/R + (di)^2/G'] with the actual
        // shunt conductance G' and the co-energy mismatches
        let (i_star, v_star) = p.coenergy_of(&x_star);
        let dv = v_star - 360.0;
        let di = i_star - i_bar;
        let g_shunt = p.g + p.g0_actual;
        let expected = 5e8 - 0.25 * (dv * dv / p.r + di * di / g_shunt);
        assert_relative_eq!(cert.margins[2].margin, expected, max_relative = 1e-9);
        assert!(cert.satisfied);
    }

    #[test]
    fn plid_alpha_matches_the_block_formula() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::None).unwrap();
        let cert = plid_certificate(&sys, &cfg, &x_star).unwrap();
        // bdiag(R, K_L) against bdiag(Q^-1, K_I) for K_P = K_D = 0
        let d_min = p.r.min(p.g + p.g0_actual).min(5e8);
        let q_max = p.l.max(p.c).max(1e-4);
        assert_relative_eq!(cert.alpha, 2.0 * d_min / q_max, max_relative = 1e-9);
    }

    #[test]
    fn plid_certified_rate_is_conservative_in_simulation() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::None).unwrap();
        let cert = plid_certificate(&sys, &cfg, &x_star).unwrap();
        assert!(cert.satisfied && cert.alpha > 0.0);

        let lyap = Lyapunov::for_config(&sys, &cfg, &x_star, 0.0).unwrap();
        let x0 = p.state_from_coenergy(55.0, 340.0);
        let scenario = crate::sim::Scenario::new(1.0, 1e-5, x0);
        let traj = crate::sim::run_scenario(&sys, &est, &cfg, &scenario, Some(&lyap)).unwrap();
        // observed decay at least half the certified rate
        let report = crate::sim::exponential_envelope(&traj, &lyap, 0.5 * cert.alpha, 0.05);
        assert!(report.holds, "worst ratio {}", report.worst_ratio);
    }

    #[test]
    fn mplid_identity_map_matches_plid_margins() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(1e-6, 1e-4, 1e-7, Some(5e8)).unwrap();
        let plid =
            ControllerConfig::new(&est, gains.clone(), x_star.clone(), MonotoneSpec::None).unwrap();
        let mplid =
            ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::Identity).unwrap();
        let c1 = plid_certificate(&sys, &plid, &x_star).unwrap();
        let c2 = mplid_certificate(&sys, &mplid, &x_star).unwrap();
        for (a, b) in c1.margins.iter().zip(c2.margins.iter()) {
            assert_relative_eq!(a.margin, b.margin, max_relative = 1e-9);
        }
        assert!(c2.satisfied);
    }

    #[test]
    fn mplid_exact_knowledge_is_satisfied() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(1e-6, 1e-4, 1e-7, Some(5e8)).unwrap();
        let cfg = ControllerConfig::new(
            &est,
            gains,
            x_star.clone(),
            MonotoneSpec::Tanh { u_min: 0.1, u_max: 0.9, lambda: 10.0 },
        )
        .unwrap();
        let cert = mplid_certificate(&sys, &cfg, &x_star).unwrap();
        assert!(cert.satisfied, "{:?}", cert.margins);
        assert_eq!(cert.variant, Variant::MPlid);
    }

    #[test]
    fn mplid_deep_saturation_fails_or_degenerates() {
        let p = BoostParams { i0_actual: 40.0, ..Default::default() };
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        // a tiny leakage cannot dominate the mismatch once the map flattens
        let gains = Gains::scalar(1e-6, 1e-4, 0.0, Some(1.0)).unwrap();
        let cfg = ControllerConfig::new(
            &est,
            gains,
            x_star.clone(),
            MonotoneSpec::Tanh { u_min: 0.1, u_max: 0.9, lambda: 10.0 },
        )
        .unwrap();
        let i_bar = p.actual_flow().solve(300.0).unwrap();
        let x_bar = p.state_from_coenergy(i_bar, 300.0);

        // partially saturated integrator argument: condition margin negative
        let x_c = DVector::from_vec(vec![(0.27 + 0.45) / 1e-4]);
        let cert = mplid_certificate_with_xc(&sys, &cfg, &x_bar, &x_c).unwrap();
        assert!(!cert.satisfied);
        assert!(cert.margins[2].margin < 0.0);

        // deep saturation underflows the map derivative entirely
        let x_c = DVector::from_vec(vec![1e6]);
        let err = mplid_certificate_with_xc(&sys, &cfg, &x_bar, &x_c).unwrap_err();
        assert!(matches!(err, StabilityError::SingularM2 { .. }));
    }

    #[test]
    fn lyapunov_vanishes_at_the_equilibrium() {
        let (p, sys, cfg, x_star) = boost_pid();
        let lyap = Lyapunov::for_config(&sys, &cfg, &x_star, 1e-3).unwrap();
        let (xb, xcb) = lyap.equilibrium();
        let (xb, xcb) = (xb.clone(), xcb.clone());
        assert_abs_diff_eq!(lyap.value(&xb, &xcb), 0.0, epsilon = 1e-12);

        // V_0 dominates the incremental Hamiltonian
        let lyap0 = Lyapunov::for_config(&sys, &cfg, &x_star, 0.0).unwrap();
        let x = p.state_from_coenergy(60.0, 350.0);
        let xc = &xcb + DVector::from_vec(vec![55.0]);
        let dx = &x - &x_star;
        let h_inc = 0.5 * dx.dot(&(sys.q() * &dx));
        assert!(lyap0.value(&x, &xc) >= h_inc);
    }

    #[test]
    fn path_integral_is_quadratic_for_the_identity_map() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg =
            ControllerConfig::new(&est, gains, x_star.clone(), MonotoneSpec::Identity).unwrap();
        let lyap = Lyapunov::for_config(&sys, &cfg, &x_star, 0.0).unwrap();
        let (xb, xcb) = lyap.equilibrium();
        let (xb, xcb) = (xb.clone(), xcb.clone());
        for dxc in [-300.0, -1.0, 0.5, 800.0] {
            let v = lyap.value(&xb, &(&xcb + DVector::from_vec(vec![dxc])));
            assert_relative_eq!(v, 0.5 * 1e-4 * dxc * dxc, max_relative = 1e-9);
        }
    }

    #[test]
    fn path_integral_matches_the_closed_form_antiderivative() {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg = ControllerConfig::new(
            &est,
            gains,
            x_star.clone(),
            MonotoneSpec::Tanh { u_min: 0.1, u_max: 0.9, lambda: 10.0 },
        )
        .unwrap();
        let map = match cfg.monotone.as_ref().unwrap() {
            crate::controllers::Monotone::Tanh(m) => m.clone(),
            _ => unreachable!(),
        };
        let lyap = Lyapunov::for_config(&sys, &cfg, &x_star, 0.0).unwrap();
        let (xb, xcb) = lyap.equilibrium();
        let (xb, xcb) = (xb.clone(), xcb.clone());

        // antiderivative of w:
        // (uM-um)/2 ln cosh(lambda s - u0)/lambda + (uM+um)/2 s
        let anti = |map: &MonotoneMap, s: f64| {
            let half = 0.5 * (map.u_max[0] - map.u_min[0]);
            let mid = 0.5 * (map.u_max[0] + map.u_min[0]);
            let arg = map.lambda[0] * s - map.offset()[0];
            half * arg.cosh().ln() / map.lambda[0] + mid * s
        };
        let k = 1e-4;
        let base = k * xcb[0];
        let w0 = map.eval(&DVector::from_vec(vec![base]))[0];
        for dxc in [-5000.0, -120.0, 3.0, 440.0, 9000.0] {
            let v = lyap.value(&xb, &(&xcb + DVector::from_vec(vec![dxc])));
            let expected = (anti(&map, base + k * dxc) - anti(&map, base)) / k - w0 * dxc;
            assert_relative_eq!(v, expected, max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}
