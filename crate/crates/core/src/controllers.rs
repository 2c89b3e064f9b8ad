//! PID, leaky-PID (PLID) and monotone anti-windup (mPLID) controllers driven
//! by the estimated passive output `y = g'(x*) Q x`.
//!
//! The three laws share the proportional/integral/derivative core
//!
//! ```text
//! dxc/dt = -g'(x*) Q x                      (integral channel)
//! u      = -K_P y + K_I xc - K_D g'(x*) Q dx/dt
//! ```
//!
//! The PLID adds a leakage `-K_L K_I (xc - xc*)` to the integral channel; the
//! monotone variants pass the output and the leakage through a bounded,
//! strongly monotone map `w`, which keeps the modulation inside its physical
//! limits without integrator windup.
//!
//! The derivative action creates an algebraic loop between `u` and `dx/dt`;
//! it is resolved exactly per evaluation (an m-by-m linear solve, or a damped
//! Newton iteration when the monotone map is active).

use nalgebra::{DMatrix, DVector};

use crate::equilibria::equilibrium_control;
use crate::error::ControllerError;
use crate::phs::{PhSystem, State};

/// Integrator state of the controller.
pub type ControllerState = DVector<f64>;

/// Convergence tolerance of the saturation algebraic loop.
const LOOP_TOL: f64 = 1e-12;
/// Iteration cap of the saturation algebraic loop.
const LOOP_CAP: usize = 100;

/// Which controller law a configuration encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Pid,
    Plid,
    MPid,
    MPlid,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Pid => "PID",
            Variant::Plid => "PLID",
            Variant::MPid => "mPID",
            Variant::MPlid => "mPLID",
        };
        f.write_str(s)
    }
}

/// Gain matrices of the controller. `K_I` must be positive definite, `K_P`
/// and `K_D` positive semidefinite, `K_L` (when present) positive
/// semidefinite; a zero `K_L` degenerates to the plain PID.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub k_p: DMatrix<f64>,
    pub k_i: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
    pub k_l: Option<DMatrix<f64>>,
}

fn check_symmetric(m: &DMatrix<f64>, name: &'static str) -> Result<(), ControllerError> {
    if m != &m.transpose() {
        return Err(ControllerError::AsymmetricGain { name });
    }
    Ok(())
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn check_psd(m: &DMatrix<f64>, name: &'static str) -> Result<(), ControllerError> {
    check_symmetric(m, name)?;
    let lo = min_eig(m);
    let scale = m.norm().max(1.0);
    if lo < -1e-12 * scale {
        return Err(ControllerError::InvalidGain {
            name,
            requirement: "positive semidefinite",
            min_eig: lo,
        });
    }
    Ok(())
}

fn check_pd(m: &DMatrix<f64>, name: &'static str) -> Result<(), ControllerError> {
    check_symmetric(m, name)?;
    let lo = min_eig(m);
    if lo <= 0.0 {
        return Err(ControllerError::InvalidGain {
            name,
            requirement: "positive definite",
            min_eig: lo,
        });
    }
    Ok(())
}

impl Gains {
    pub fn new(
        k_p: DMatrix<f64>,
        k_i: DMatrix<f64>,
        k_d: DMatrix<f64>,
        k_l: Option<DMatrix<f64>>,
    ) -> Result<Self, ControllerError> {
        check_psd(&k_p, "K_P")?;
        check_pd(&k_i, "K_I")?;
        check_psd(&k_d, "K_D")?;
        if let Some(kl) = &k_l {
            check_psd(kl, "K_L")?;
        }
        Ok(Self { k_p, k_i, k_d, k_l })
    }

    /// Scalar gains for single-input converters.
    pub fn scalar(k_p: f64, k_i: f64, k_d: f64, k_l: Option<f64>) -> Result<Self, ControllerError> {
        let m1 = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(m1(k_p), m1(k_i), m1(k_d), k_l.map(m1))
    }

    /// Diagonal gains for multi-input converters.
    pub fn diagonal(
        k_p: &[f64],
        k_i: &[f64],
        k_d: &[f64],
        k_l: Option<&[f64]>,
    ) -> Result<Self, ControllerError> {
        let d = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(v));
        Self::new(d(k_p), d(k_i), d(k_d), k_l.map(d))
    }

    pub fn dim(&self) -> usize {
        self.k_i.nrows()
    }

    pub fn has_derivative(&self) -> bool {
        self.k_d.iter().any(|v| *v != 0.0)
    }

    pub fn has_leakage(&self) -> bool {
        self.k_l.as_ref().is_some_and(|kl| kl.iter().any(|v| *v != 0.0))
    }
}

/// Bounded strongly monotone output map built from per-channel hyperbolic
/// tangents:
///
/// ```text
/// w(s) = (u_max - u_min)/2 * tanh(lambda s - u0) + (u_max + u_min)/2
/// ```
///
/// The offset `u0` is fixed at construction by the requirement that the map
/// preserve the nominal input, `w(u*) = u*`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub lambda: DVector<f64>,
    pub u_star: DVector<f64>,
    u0: DVector<f64>,
    /// Strong-monotonicity constant: infimum of dw/ds over the evaluation
    /// interval configured at construction.
    pub eta: f64,
}

impl MonotoneMap {
    pub fn new(
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        lambda: DVector<f64>,
        u_star: DVector<f64>,
    ) -> Result<Self, ControllerError> {
        let m = u_star.len();
        let mut u0 = DVector::zeros(m);
        for ch in 0..m {
            if lambda[ch].is_nan() || lambda[ch] <= 0.0 {
                return Err(ControllerError::NonPositiveSteepness { channel: ch });
            }
            if !(u_min[ch] < u_star[ch] && u_star[ch] < u_max[ch]) {
                return Err(ControllerError::NominalOutsideBounds { channel: ch });
            }
            let t = (2.0 * u_star[ch] - u_max[ch] - u_min[ch]) / (u_max[ch] - u_min[ch]);
            u0[ch] = lambda[ch] * u_star[ch] - t.atanh();
        }
        let mut map = Self { u_min, u_max, lambda, u_star: u_star.clone(), u0, eta: 0.0 };
        let defect = (map.eval(&u_star) - &u_star).abs().max();
        if defect > 1e-12 * u_star.abs().max().max(1.0) {
            return Err(ControllerError::FixedPointDefect { defect });
        }
        // default evaluation interval: one bound span beyond each bound
        let span = &map.u_max - &map.u_min;
        map.eta = map.eta_over(&(&map.u_min - &span), &(&map.u_max + &span));
        Ok(map)
    }

    /// Map with identical bounds and steepness on every channel.
    pub fn uniform(u_min: f64, u_max: f64, lambda: f64, u_star: DVector<f64>) -> Result<Self, ControllerError> {
        let m = u_star.len();
        Self::new(
            DVector::from_element(m, u_min),
            DVector::from_element(m, u_max),
            DVector::from_element(m, lambda),
            u_star,
        )
    }

    pub fn eval(&self, s: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(s.len(), |ch, _| {
            let half_span = 0.5 * (self.u_max[ch] - self.u_min[ch]);
            let mid = 0.5 * (self.u_max[ch] + self.u_min[ch]);
            let w = half_span * (self.lambda[ch] * s[ch] - self.u0[ch]).tanh() + mid;
            // f64 tanh reaches +-1.0 exactly for |t| > ~19; keep the output
            // strictly interior so bound checks stay bit-exact
            if w >= self.u_max[ch] {
                self.u_max[ch].next_down()
            } else if w <= self.u_min[ch] {
                self.u_min[ch].next_up()
            } else {
                w
            }
        })
    }

    /// Diagonal of the Jacobian dw/ds at `s` (strictly positive until the
    /// tanh derivative underflows in deep saturation).
    pub fn derivative(&self, s: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(s.len(), |ch, _| {
            let half_span = 0.5 * (self.u_max[ch] - self.u_min[ch]);
            let t = (self.lambda[ch] * s[ch] - self.u0[ch]).tanh();
            half_span * self.lambda[ch] * (1.0 - t * t)
        })
    }

    /// Pre-image of an output value strictly inside the bounds.
    pub fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>, ControllerError> {
        let mut s = DVector::zeros(y.len());
        for ch in 0..y.len() {
            let t = (2.0 * y[ch] - self.u_max[ch] - self.u_min[ch]) / (self.u_max[ch] - self.u_min[ch]);
            if t.abs() >= 1.0 {
                return Err(ControllerError::OutsideMapRange {
                    value: y[ch],
                    lo: self.u_min[ch],
                    hi: self.u_max[ch],
                });
            }
            s[ch] = (self.u0[ch] + t.atanh()) / self.lambda[ch];
        }
        Ok(s)
    }

    /// Offset `u0` fixed by the nominal-input preservation requirement.
    pub fn offset(&self) -> &DVector<f64> {
        &self.u0
    }

    /// Infimum of dw/ds over a componentwise interval. dw/ds is unimodal per
    /// channel, so the infimum sits at an endpoint.
    pub fn eta_over(&self, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
        let d_lo = self.derivative(lo);
        let d_hi = self.derivative(hi);
        d_lo.iter().chain(d_hi.iter()).fold(f64::INFINITY, |a, b| a.min(*b))
    }
}

/// Output transformation of the controller.
#[derive(Debug, Clone, PartialEq)]
pub enum Monotone {
    /// Pass-through; turns the monotone variants back into PID / PLID.
    Identity,
    Tanh(MonotoneMap),
}

impl Monotone {
    pub fn eval(&self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            Monotone::Identity => s.clone(),
            Monotone::Tanh(map) => map.eval(s),
        }
    }

    pub fn derivative(&self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            Monotone::Identity => DVector::from_element(s.len(), 1.0),
            Monotone::Tanh(map) => map.derivative(s),
        }
    }

    pub fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>, ControllerError> {
        match self {
            Monotone::Identity => Ok(y.clone()),
            Monotone::Tanh(map) => map.inverse(y),
        }
    }
}

/// How to saturate the controller output.
#[derive(Debug, Clone, PartialEq)]
pub enum MonotoneSpec {
    None,
    Identity,
    Tanh { u_min: f64, u_max: f64, lambda: f64 },
}

/// Immutable controller configuration: gains, references and the optional
/// monotone map. Construction resolves the reference pair against the
/// estimated model: `u* = u_hat(x*)` and `xc* = K_I^-1 u*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub gains: Gains,
    pub x_star: State,
    pub u_star: DVector<f64>,
    pub x_c_star: DVector<f64>,
    pub monotone: Option<Monotone>,
}

impl ControllerConfig {
    pub fn new(
        estimated: &PhSystem,
        gains: Gains,
        x_star: State,
        spec: MonotoneSpec,
    ) -> Result<Self, ControllerError> {
        if gains.dim() != estimated.input_dim() {
            return Err(ControllerError::InvalidGain {
                name: "K_I",
                requirement: "sized like the input",
                min_eig: f64::NAN,
            });
        }
        let u_star = equilibrium_control(estimated, &x_star)?;
        let x_c_star = gains
            .k_i
            .clone()
            .lu()
            .solve(&u_star)
            .ok_or(ControllerError::SingularLoop)?;
        let monotone = match spec {
            MonotoneSpec::None => None,
            MonotoneSpec::Identity => Some(Monotone::Identity),
            MonotoneSpec::Tanh { u_min, u_max, lambda } => Some(Monotone::Tanh(
                MonotoneMap::uniform(u_min, u_max, lambda, u_star.clone())?,
            )),
        };
        Ok(Self { gains, x_star, u_star, x_c_star, monotone })
    }

    pub fn variant(&self) -> Variant {
        match (self.monotone.is_some(), self.gains.k_l.is_some()) {
            (false, false) => Variant::Pid,
            (false, true) => Variant::Plid,
            (true, false) => Variant::MPid,
            (true, true) => Variant::MPlid,
        }
    }

    /// Same gains and map shape, new reference (the map is rebuilt so it
    /// preserves the new nominal input).
    pub fn with_reference(&self, estimated: &PhSystem, x_star: State) -> Result<Self, ControllerError> {
        let spec = match &self.monotone {
            None => MonotoneSpec::None,
            Some(Monotone::Identity) => MonotoneSpec::Identity,
            Some(Monotone::Tanh(map)) => MonotoneSpec::Tanh {
                u_min: map.u_min[0],
                u_max: map.u_max[0],
                lambda: map.lambda[0],
            },
        };
        Self::new(estimated, self.gains.clone(), x_star, spec)
    }

    /// Same reference and map shape, new gains.
    pub fn with_gains(&self, estimated: &PhSystem, gains: Gains) -> Result<Self, ControllerError> {
        let spec = match &self.monotone {
            None => MonotoneSpec::None,
            Some(Monotone::Identity) => MonotoneSpec::Identity,
            Some(Monotone::Tanh(map)) => MonotoneSpec::Tanh {
                u_min: map.u_min[0],
                u_max: map.u_max[0],
                lambda: map.lambda[0],
            },
        };
        Self::new(estimated, gains, self.x_star.clone(), spec)
    }

    /// `g(x*)` for a system sharing the converter topology.
    pub fn g_star(&self, sys: &PhSystem) -> DMatrix<f64> {
        sys.input_matrix(&self.x_star).expect("reference dimension")
    }
}

/// Solves `v + A w(v) = c` by damped Newton iteration.
///
/// `F` is strictly monotone whenever `A diag(w') + I` stays nonsingular,
/// which holds near operating points because `A = K_D g*' Q g(x)` is close
/// to a positive semidefinite matrix there.
fn solve_monotone_loop(
    a: &DMatrix<f64>,
    map: &Monotone,
    c: &DVector<f64>,
) -> Result<DVector<f64>, ControllerError> {
    let m = c.len();
    let mut v = c.clone();
    let mut fv = &v + a * map.eval(&v) - c;
    for _ in 0..LOOP_CAP {
        let res = fv.norm();
        if res <= LOOP_TOL * (1.0 + v.norm()) {
            return Ok(v);
        }
        let jac = DMatrix::identity(m, m) + a * DMatrix::from_diagonal(&map.derivative(&v));
        let dv = jac.lu().solve(&(-&fv)).ok_or(ControllerError::SingularLoop)?;
        // backtracking line search on |F|
        let mut t = 1.0;
        loop {
            let v_new = &v + t * &dv;
            let f_new = &v_new + a * map.eval(&v_new) - c;
            if f_new.norm() <= (1.0 - 0.5 * t) * res || t < 1e-8 {
                v = v_new;
                fv = f_new;
                break;
            }
            t *= 0.5;
        }
    }
    let res = fv.norm();
    if res <= LOOP_TOL * (1.0 + v.norm()) {
        Ok(v)
    } else {
        Err(ControllerError::LoopNotConverged { iterations: LOOP_CAP, residual: res })
    }
}

/// Controller output at `(x, xc)`, with the derivative-action algebraic loop
/// resolved exactly.
///
/// Without a monotone map, `u` solves
/// `(I + K_D g*' Q g(x)) u = -K_P y + K_I xc - K_D g*' Q f(x)`; with a map,
/// `u = w(v)` where `v` solves the corresponding fixed point. With `K_D = 0`
/// both reduce to direct evaluation.
pub fn control_output(
    cfg: &ControllerConfig,
    sys: &PhSystem,
    x: &State,
    x_c: &ControllerState,
) -> Result<DVector<f64>, ControllerError> {
    let g_star = cfg.g_star(sys);
    let q = sys.q();
    let y = g_star.transpose() * (q * x);
    let mut c = -(&cfg.gains.k_p * &y) + &cfg.gains.k_i * x_c;
    if !cfg.gains.has_derivative() {
        return Ok(match &cfg.monotone {
            None => c,
            Some(map) => map.eval(&c),
        });
    }
    let f = sys.drift(x).map_err(crate::error::EquilibriumError::from)?;
    let g_x = sys.input_matrix(x).map_err(crate::error::EquilibriumError::from)?;
    let kd_gsq = &cfg.gains.k_d * (g_star.transpose() * q);
    c -= &kd_gsq * f;
    let a_loop = &kd_gsq * g_x;
    match &cfg.monotone {
        None => {
            let m = a_loop.nrows();
            let lhs = DMatrix::identity(m, m) + a_loop;
            lhs.lu().solve(&c).ok_or(ControllerError::SingularLoop)
        }
        Some(map) => {
            let v = solve_monotone_loop(&a_loop, map, &c)?;
            Ok(map.eval(&v))
        }
    }
}

/// Integral-channel derivative `dxc/dt` for the configured variant.
pub fn integrator_rhs(
    cfg: &ControllerConfig,
    sys: &PhSystem,
    x: &State,
    x_c: &ControllerState,
) -> Result<DVector<f64>, ControllerError> {
    let g_star = cfg.g_star(sys);
    let mut rhs = -(g_star.transpose() * (sys.q() * x));
    if let Some(k_l) = &cfg.gains.k_l {
        match &cfg.monotone {
            None | Some(Monotone::Identity) => {
                rhs -= k_l * (&cfg.gains.k_i * (x_c - &cfg.x_c_star));
            }
            Some(Monotone::Tanh(map)) => {
                let w_c = map.eval(&(&cfg.gains.k_i * x_c));
                let w_star = map.eval(&(&cfg.gains.k_i * &cfg.x_c_star));
                rhs -= k_l * (w_c - w_star);
            }
        }
    }
    Ok(rhs)
}

/// Steady-state droop slope `D = K_P + K_L^-1` between the control input and
/// the passive output.
pub fn droop_slope(cfg: &ControllerConfig) -> Result<DMatrix<f64>, ControllerError> {
    let k_l = cfg.gains.k_l.as_ref().ok_or(ControllerError::MissingLeakageReference)?;
    let inv = k_l.clone().try_inverse().ok_or(ControllerError::InvalidGain {
        name: "K_L",
        requirement: "invertible for the droop slope",
        min_eig: 0.0,
    })?;
    Ok(&cfg.gains.k_p + inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::boost::BoostParams;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn boost_setup(kl: Option<f64>, spec: MonotoneSpec) -> (BoostParams, PhSystem, ControllerConfig) {
        let p = BoostParams::default();
        let sys = p.build_actual().unwrap();
        let est = p.build_estimated().unwrap();
        let gains = Gains::scalar(1e-6, 1e-4, 1e-7, kl).unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star, spec).unwrap();
        (p, sys, cfg)
    }

    #[test]
    fn integral_only_controller_is_direct() {
        let p = BoostParams::default();
        let est = p.build_estimated().unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, None).unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let cfg = ControllerConfig::new(&est, gains, x_star, MonotoneSpec::None).unwrap();
        let x = p.state_from_coenergy(50.0, 300.0);
        let x_c = DVector::from_vec(vec![1234.5]);
        let u = control_output(&cfg, &est, &x, &x_c).unwrap();
        assert_relative_eq!(u[0], 1e-4 * 1234.5, max_relative = 1e-14);
    }

    #[test]
    fn equilibrium_is_preserved_for_all_variants() {
        for spec in [
            MonotoneSpec::None,
            MonotoneSpec::Identity,
            MonotoneSpec::Tanh { u_min: 0.1, u_max: 0.9, lambda: 10.0 },
        ] {
            let (_, sys, cfg) = boost_setup(Some(5e8), spec);
            let u = control_output(&cfg, &sys, &cfg.x_star.clone(), &cfg.x_c_star.clone()).unwrap();
            assert_relative_eq!(u[0], cfg.u_star[0], max_relative = 1e-10);
            // the integrator is stationary there when x* is assignable
            let rhs = integrator_rhs(&cfg, &sys, &cfg.x_star.clone(), &cfg.x_c_star.clone()).unwrap();
            assert_abs_diff_eq!(rhs[0], 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn algebraic_loop_matches_a_full_linear_solve() {
        // oracle: solve the coupled (u, dx) system as one (m + n) linear system
        let (p, sys, cfg) = boost_setup(None, MonotoneSpec::None);
        for (i_l, v_c, xc) in [(50.0, 300.0, 2500.0), (74.3, 380.0, 2703.0), (-10.0, 450.0, 100.0)] {
            let x = p.state_from_coenergy(i_l, v_c);
            let x_c = DVector::from_vec(vec![xc]);
            let u = control_output(&cfg, &sys, &x, &x_c).unwrap();

            let n = 2;
            let g_star = cfg.g_star(&sys);
            let q = sys.q();
            let y = (g_star.transpose() * (q * &x))[0];
            let f = sys.drift(&x).unwrap();
            let g_x = sys.input_matrix(&x).unwrap();
            // unknowns (u, dx): u + K_D g*'Q dx = -K_P y + K_I xc; dx - g u = f
            let mut a = DMatrix::zeros(n + 1, n + 1);
            let mut b = DVector::zeros(n + 1);
            a[(0, 0)] = 1.0;
            let row = cfg.gains.k_d[(0, 0)] * (g_star.transpose() * q);
            a[(0, 1)] = row[(0, 0)];
            a[(0, 2)] = row[(0, 1)];
            b[0] = -cfg.gains.k_p[(0, 0)] * y + cfg.gains.k_i[(0, 0)] * xc;
            for i in 0..n {
                a[(1 + i, 0)] = -g_x[(i, 0)];
                a[(1 + i, 1 + i)] = 1.0;
                b[1 + i] = f[i];
            }
            let sol = a.lu().solve(&b).unwrap();
            assert_relative_eq!(u[0], sol[0], max_relative = 1e-12);

            // substituting back reproduces the defining output equation
            let dx = sys.dynamics(&x, &u).unwrap();
            let u_check = -cfg.gains.k_p[(0, 0)] * y + cfg.gains.k_i[(0, 0)] * xc
                - cfg.gains.k_d[(0, 0)] * (g_star.transpose() * (q * &dx))[0];
            assert_relative_eq!(u[0], u_check, max_relative = 1e-10);
        }
    }

    #[test]
    fn saturation_loop_matches_bisection() {
        let (p, sys, cfg) = boost_setup(None, MonotoneSpec::Tanh { u_min: 0.1, u_max: 0.9, lambda: 10.0 });
        let map = match cfg.monotone.as_ref().unwrap() {
            Monotone::Tanh(m) => m.clone(),
            _ => unreachable!(),
        };
        for (i_l, v_c, xc) in [(50.0, 300.0, 2500.0), (74.3, 380.0, 2703.0), (20.0, 420.0, 8000.0)] {
            let x = p.state_from_coenergy(i_l, v_c);
            let x_c = DVector::from_vec(vec![xc]);
            let u = control_output(&cfg, &sys, &x, &x_c).unwrap();

            // scalar oracle: v + a w(v) - c is strictly increasing; bisect it
            let g_star = cfg.g_star(&sys);
            let q = sys.q();
            let y = (g_star.transpose() * (q * &x))[0];
            let f = sys.drift(&x).unwrap();
            let g_x = sys.input_matrix(&x).unwrap();
            let kd_gsq = cfg.gains.k_d[(0, 0)] * (g_star.transpose() * q);
            let a = (&kd_gsq * &g_x)[(0, 0)];
            let c = -cfg.gains.k_p[(0, 0)] * y + cfg.gains.k_i[(0, 0)] * xc - (&kd_gsq * &f)[0];
            let fv = |v: f64| v + a * map.eval(&DVector::from_vec(vec![v]))[0] - c;
            let (mut lo, mut hi) = (c - a.abs() - 1.0, c + a.abs() + 1.0);
            assert!(fv(lo) < 0.0 && fv(hi) > 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if fv(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let v_oracle = 0.5 * (lo + hi);
            let u_oracle = map.eval(&DVector::from_vec(vec![v_oracle]))[0];
            assert_relative_eq!(u[0], u_oracle, max_relative = 1e-10);

            // substituting back: u = w(-K_P y + K_I xc - K_D g*'Q dx) with
            // the induced dx = f + g u
            let dx = sys.dynamics(&x, &u).unwrap();
            let v_back = -cfg.gains.k_p[(0, 0)] * y + cfg.gains.k_i[(0, 0)] * xc
                - (cfg.gains.k_d[(0, 0)] * (g_star.transpose() * (q * &dx)))[0];
            let u_back = map.eval(&DVector::from_vec(vec![v_back]))[0];
            assert_relative_eq!(u[0], u_back, max_relative = 1e-10);
        }
    }

    #[test]
    fn monotone_map_preserves_the_nominal_input() {
        let u_star = DVector::from_vec(vec![0.2703759]);
        let map = MonotoneMap::uniform(0.1, 0.9, 10.0, u_star.clone()).unwrap();
        let w = map.eval(&u_star);
        assert_abs_diff_eq!(w[0], u_star[0], epsilon = 1e-13);
    }

    #[test]
    fn monotone_map_saturates_strictly_inside() {
        let map = MonotoneMap::uniform(0.1, 0.9, 10.0, DVector::from_vec(vec![0.27])).unwrap();
        for s in [-1e9, -50.0, -2.0, 0.0, 0.27, 2.0, 50.0, 1e9] {
            let w = map.eval(&DVector::from_vec(vec![s]))[0];
            assert!(w > 0.1 && w < 0.9, "s={s} -> w={w}");
        }
        // asymptotes
        let w_hi = map.eval(&DVector::from_vec(vec![1e6]))[0];
        assert!(w_hi > 0.9 - 1e-12);
        let w_lo = map.eval(&DVector::from_vec(vec![-1e6]))[0];
        assert!(w_lo < 0.1 + 1e-12);
    }

    #[test]
    fn monotone_map_is_strictly_increasing_with_positive_derivative() {
        // stay clear of the region where the f64 tanh plateaus at 1 ulp
        // inside the bounds
        let map = MonotoneMap::uniform(0.1, 0.9, 7.5, DVector::from_vec(vec![0.4])).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..100 {
            let s = -1.8 + 4.2 * (k as f64) / 99.0;
            let w = map.eval(&DVector::from_vec(vec![s]))[0];
            assert!(w > prev);
            prev = w;
            assert!(map.derivative(&DVector::from_vec(vec![s]))[0] > 0.0);
        }
        assert!(map.eta > 0.0);
    }

    #[test]
    fn monotone_map_inverse_round_trips() {
        let map = MonotoneMap::uniform(0.1, 0.9, 10.0, DVector::from_vec(vec![0.27])).unwrap();
        for u in [0.11, 0.27, 0.5, 0.89] {
            let v = map.inverse(&DVector::from_vec(vec![u])).unwrap();
            let w = map.eval(&v);
            assert_relative_eq!(w[0], u, max_relative = 1e-12);
        }
        assert!(map.inverse(&DVector::from_vec(vec![0.95])).is_err());
    }

    #[test]
    fn monotone_map_rejects_bad_nominal() {
        let err = MonotoneMap::uniform(0.1, 0.9, 10.0, DVector::from_vec(vec![0.95])).unwrap_err();
        assert!(matches!(err, ControllerError::NominalOutsideBounds { channel: 0 }));
        let err = MonotoneMap::uniform(0.1, 0.9, -1.0, DVector::from_vec(vec![0.5])).unwrap_err();
        assert!(matches!(err, ControllerError::NonPositiveSteepness { channel: 0 }));
    }

    #[test]
    fn integrator_leakage_contracts_toward_the_reference() {
        let (p, sys, cfg) = boost_setup(Some(5e8), MonotoneSpec::None);
        // at x = x*, a displaced integrator state is pulled back
        let x = cfg.x_star.clone();
        let delta = 1e-3;
        let x_c = &cfg.x_c_star + DVector::from_vec(vec![delta]);
        let rhs = integrator_rhs(&cfg, &sys, &x, &x_c).unwrap();
        let expected = -5e8 * 1e-4 * delta;
        // the passive-output term is only zero up to the power-flow residual
        assert_relative_eq!(rhs[0], expected, max_relative = 1e-6);
        assert!(rhs[0] < 0.0);
        let _ = p;
    }

    #[test]
    fn plid_with_zero_leakage_reduces_to_pid() {
        let (p, sys, cfg_pid) = boost_setup(None, MonotoneSpec::None);
        let (_, _, cfg_plid) = boost_setup(Some(0.0), MonotoneSpec::None);
        for k in 0..50 {
            let t = k as f64;
            let x = p.state_from_coenergy(20.0 + t, 300.0 + 2.0 * t);
            let x_c = DVector::from_vec(vec![2000.0 + 10.0 * t]);
            let u1 = control_output(&cfg_pid, &sys, &x, &x_c).unwrap();
            let u2 = control_output(&cfg_plid, &sys, &x, &x_c).unwrap();
            assert_abs_diff_eq!(u1[0], u2[0], epsilon = 1e-12);
            let r1 = integrator_rhs(&cfg_pid, &sys, &x, &x_c).unwrap();
            let r2 = integrator_rhs(&cfg_plid, &sys, &x, &x_c).unwrap();
            assert_abs_diff_eq!(r1[0], r2[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn mplid_with_identity_map_reduces_to_plid() {
        let (p, sys, cfg_plid) = boost_setup(Some(5e8), MonotoneSpec::None);
        let (_, _, cfg_mplid) = boost_setup(Some(5e8), MonotoneSpec::Identity);
        for k in 0..50 {
            let t = k as f64;
            let x = p.state_from_coenergy(20.0 + t, 300.0 + 2.0 * t);
            let x_c = DVector::from_vec(vec![2600.0 + 5.0 * t]);
            let u1 = control_output(&cfg_plid, &sys, &x, &x_c).unwrap();
            let u2 = control_output(&cfg_mplid, &sys, &x, &x_c).unwrap();
            assert_relative_eq!(u1[0], u2[0], max_relative = 1e-12);
            let r1 = integrator_rhs(&cfg_plid, &sys, &x, &x_c).unwrap();
            let r2 = integrator_rhs(&cfg_mplid, &sys, &x, &x_c).unwrap();
            assert_abs_diff_eq!(r1[0], r2[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn droop_slope_values() {
        let (_, _, cfg) = boost_setup(Some(5e8), MonotoneSpec::None);
        let d = droop_slope(&cfg).unwrap();
        // K_P + 1/K_L with K_P = 1e-6
        assert_relative_eq!(d[(0, 0)], 1e-6 + 2e-9, max_relative = 1e-12);

        let p = BoostParams::default();
        let est = p.build_estimated().unwrap();
        let (x_star, _) = p.reference_for_voltage(380.0).unwrap();
        let gains = Gains::scalar(0.0, 1e-4, 0.0, Some(5e8)).unwrap();
        let cfg0 = ControllerConfig::new(&est, gains, x_star, MonotoneSpec::None).unwrap();
        assert_relative_eq!(droop_slope(&cfg0).unwrap()[(0, 0)], 2e-9, max_relative = 1e-12);

        // K_L -> infinity recovers the proportional gain
        let gains = Gains::scalar(1e-6, 1e-4, 0.0, Some(1e30)).unwrap();
        let cfg_inf = ControllerConfig::new(&est, gains, cfg0.x_star.clone(), MonotoneSpec::None).unwrap();
        assert_relative_eq!(droop_slope(&cfg_inf).unwrap()[(0, 0)], 1e-6, max_relative = 1e-9);
    }

    #[test]
    fn gain_validation() {
        assert!(Gains::scalar(-1.0, 1e-4, 0.0, None).is_err());
        assert!(Gains::scalar(0.0, 0.0, 0.0, None).is_err());
        assert!(Gains::scalar(0.0, 1e-4, -1e-9, None).is_err());
        assert!(Gains::scalar(0.0, 1e-4, 0.0, Some(-1.0)).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        let id = DMatrix::identity(2, 2);
        assert!(Gains::new(bad, id.clone(), DMatrix::zeros(2, 2), None).is_err());
    }
}
