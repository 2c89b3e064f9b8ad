//! Closed-loop simulation: fixed-step RK4 over the stacked `(x, xc)` state
//! with an event schedule for reference, source, dissipation and gain
//! changes.
//!
//! The algebraic loop of the derivative action is re-solved at every RK4
//! stage, so stage derivatives are exact. Events are applied atomically at
//! their timestamps: parameters and references jump, the state is
//! continuous. Identical scenarios produce bit-identical trajectories.

use nalgebra::{DMatrix, DVector};

use crate::controllers::{control_output, integrator_rhs, ControllerConfig, Gains};
use crate::error::SimError;
use crate::phs::{PhSystem, State};
use crate::stability::Lyapunov;

/// Abort threshold: |x| growing beyond this factor of its initial size stops
/// the run. Lightly damped loops can legitimately run far from physical
/// range before that.
const DIVERGE_FACTOR: f64 = 1e6;

/// A timed batch of configuration changes, applied atomically.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub changes: Vec<Change>,
}

impl Event {
    pub fn single(t: f64, change: Change) -> Self {
        Self { t, changes: vec![change] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Change {
    /// New reference vector; the controller reference pair `(u*, xc*)` is
    /// recomputed through the estimated model.
    SetReference { x_star: State },
    /// New source vector for the actual plant (unknown to the controller).
    SetSources { e: DVector<f64> },
    /// New dissipation matrix for the actual plant.
    SetDissipation { r: DMatrix<f64> },
    /// New controller gains; `xc*` is recomputed.
    SetGains { gains: Gains },
}

/// A fixed-step simulation plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration: f64,
    pub dt: f64,
    /// Keep every `decimate`-th sample (1 keeps all).
    pub decimate: usize,
    pub initial_state: State,
    /// Initial integrator state; defaults to the configured `xc*`.
    pub initial_xc: Option<DVector<f64>>,
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn new(duration: f64, dt: f64, initial_state: State) -> Self {
        Self { duration, dt, decimate: 1, initial_state, initial_xc: None, events: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(SimError::BadScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if self.duration.is_nan() || self.duration < self.dt {
            return Err(SimError::BadScenario("duration shorter than one step".into()));
        }
        if self.decimate == 0 {
            return Err(SimError::BadScenario("decimate must be at least 1".into()));
        }
        let mut prev = -f64::INFINITY;
        for ev in &self.events {
            if ev.t <= prev {
                return Err(SimError::BadScenario(format!(
                    "event times must be strictly increasing ({} after {})",
                    ev.t, prev
                )));
            }
            if ev.t < 0.0 || ev.t > self.duration {
                return Err(SimError::BadScenario(format!(
                    "event at {} s outside [0, {}]",
                    ev.t, self.duration
                )));
            }
            let steps = ev.t / self.dt;
            if (steps - steps.round()).abs() > 1e-6 {
                return Err(SimError::BadScenario(format!(
                    "event at {} s does not align with dt = {}",
                    ev.t, self.dt
                )));
            }
            prev = ev.t;
        }
        Ok(())
    }

    /// Segment boundaries `[t_k, t_k+1)` delimited by the events.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        let mut cuts = vec![0.0];
        cuts.extend(self.events.iter().map(|e| e.t).filter(|t| *t > 0.0));
        cuts.push(self.duration);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Sampled closed-loop solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controller_states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// Estimated passive output at the active reference.
    pub outputs: Vec<DVector<f64>>,
    pub hamiltonian: Vec<f64>,
    pub lyapunov: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn index_at(&self, t: f64) -> usize {
        match self.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }
}

/// Stacked state derivative plus the control that produced it.
type RhsParts = (DVector<f64>, DVector<f64>, DVector<f64>);

fn rhs(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    t: f64,
    x: &State,
    x_c: &DVector<f64>,
) -> Result<RhsParts, SimError> {
    let u = control_output(cfg, sys, x, x_c).map_err(|source| SimError::Controller { t, source })?;
    let dx = sys.dynamics(x, &u)?;
    let dxc = integrator_rhs(cfg, sys, x, x_c).map_err(|source| SimError::Controller { t, source })?;
    Ok((dx, dxc, u))
}

/// One classical RK4 step of the closed loop. Returns the next state pair
/// and the control emitted at the step's start.
pub fn step(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x: &State,
    x_c: &DVector<f64>,
    dt: f64,
) -> Result<(State, DVector<f64>, DVector<f64>), SimError> {
    step_at(sys, cfg, 0.0, x, x_c, dt)
}

fn step_at(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    t: f64,
    x: &State,
    x_c: &DVector<f64>,
    dt: f64,
) -> Result<(State, DVector<f64>, DVector<f64>), SimError> {
    let half = 0.5 * dt;
    let (k1x, k1c, u0) = rhs(sys, cfg, t, x, x_c)?;
    let (k2x, k2c, _) = rhs(sys, cfg, t + half, &(x + half * &k1x), &(x_c + half * &k1c))?;
    let (k3x, k3c, _) = rhs(sys, cfg, t + half, &(x + half * &k2x), &(x_c + half * &k2c))?;
    let (k4x, k4c, _) = rhs(sys, cfg, t + dt, &(x + dt * &k3x), &(x_c + dt * &k3c))?;
    let x_next = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    let xc_next = x_c + dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
    Ok((x_next, xc_next, u0))
}

/// Integrates the scenario against the actual plant, recomputing references
/// through the estimated twin whenever an event demands it.
pub fn run_scenario(
    actual: &PhSystem,
    estimated: &PhSystem,
    cfg: &ControllerConfig,
    scenario: &Scenario,
    lyapunov: Option<&Lyapunov>,
) -> Result<Trajectory, SimError> {
    scenario.validate()?;
    let mut sys = actual.clone();
    let mut cfg = cfg.clone();
    let mut x = scenario.initial_state.clone();
    let mut x_c = scenario
        .initial_xc
        .clone()
        .unwrap_or_else(|| cfg.x_c_star.clone());
    let dt = scenario.dt;
    let steps = (scenario.duration / dt).round() as usize;
    let guard = DIVERGE_FACTOR * x.norm().max(1.0);

    let cap = steps / scenario.decimate + 2;
    let mut traj = Trajectory {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        controller_states: Vec::with_capacity(cap),
        controls: Vec::with_capacity(cap),
        outputs: Vec::with_capacity(cap),
        hamiltonian: Vec::with_capacity(cap),
        lyapunov: lyapunov.map(|_| Vec::with_capacity(cap)),
    };

    let record = |sys: &PhSystem,
                      cfg: &ControllerConfig,
                      traj: &mut Trajectory,
                      t: f64,
                      x: &State,
                      x_c: &DVector<f64>|
     -> Result<(), SimError> {
        let u = control_output(cfg, sys, x, x_c)
            .map_err(|source| SimError::Controller { t, source })?;
        let y = sys.passive_output(&cfg.x_star, x)?;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.controller_states.push(x_c.clone());
        traj.controls.push(u);
        traj.outputs.push(y);
        traj.hamiltonian.push(sys.hamiltonian(x)?);
        if let (Some(vals), Some(l)) = (traj.lyapunov.as_mut(), lyapunov) {
            vals.push(l.value(x, x_c));
        }
        Ok(())
    };

    let mut next_event = 0usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        // events scheduled at this step boundary fire before anything else
        while next_event < scenario.events.len() {
            let ev = &scenario.events[next_event];
            if (ev.t - t).abs() <= 0.5 * dt {
                for change in &ev.changes {
                    match change {
                        Change::SetReference { x_star } => {
                            cfg = cfg
                                .with_reference(estimated, x_star.clone())
                                .map_err(|source| SimError::Controller { t, source })?;
                        }
                        Change::SetSources { e } => {
                            sys = sys.with_sources(e.clone())?;
                        }
                        Change::SetDissipation { r } => {
                            sys = sys.with_dissipation(r.clone())?;
                        }
                        Change::SetGains { gains } => {
                            cfg = cfg
                                .with_gains(estimated, gains.clone())
                                .map_err(|source| SimError::Controller { t, source })?;
                        }
                    }
                }
                next_event += 1;
            } else {
                break;
            }
        }

        if !x.iter().all(|v| v.is_finite()) || !x_c.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { t });
        }
        let norm = x.norm();
        if norm > guard {
            return Err(SimError::Diverged { t, norm, limit: guard });
        }

        if k % scenario.decimate == 0 || k == steps {
            record(&sys, &cfg, &mut traj, t, &x, &x_c)?;
        }
        if k == steps {
            break;
        }
        let (xn, xcn, _) = step_at(&sys, &cfg, t, &x, &x_c, dt)?;
        x = xn;
        x_c = xcn;
    }
    Ok(traj)
}

/// Solves the closed-loop equilibrium `(x_bar, xc_bar)` by damped Newton on
/// the stacked vector field, starting from the supplied guess.
///
/// The Jacobian comes from central finite differences with per-component
/// scaling; the residual tolerance is relative to the source magnitude.
pub fn find_equilibrium(
    sys: &PhSystem,
    cfg: &ControllerConfig,
    x_guess: &State,
    x_c_guess: &DVector<f64>,
) -> Result<(State, DVector<f64>), SimError> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let eval = |z: &DVector<f64>| -> Result<DVector<f64>, SimError> {
        let x = z.rows(0, n).into_owned();
        let x_c = z.rows(n, m).into_owned();
        let (dx, dxc, _) = rhs(sys, cfg, 0.0, &x, &x_c)?;
        let mut out = DVector::zeros(n + m);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, m).copy_from(&dxc);
        Ok(out)
    };
    let mut z = DVector::zeros(n + m);
    z.rows_mut(0, n).copy_from(x_guess);
    z.rows_mut(n, m).copy_from(x_c_guess);
    let mut f = eval(&z)?;
    // roundoff floor of the stacked field sets what "zero" can mean here
    let scale = sys.e().norm().max(f.norm()).max(1.0);
    let tol = 1e-10 * scale;
    let stall_tol = 1e-6 * scale;

    for _ in 0..200 {
        if f.norm() <= tol {
            break;
        }
        // central-difference Jacobian
        let mut jac = DMatrix::zeros(n + m, n + m);
        for j in 0..n + m {
            let h = 1e-7 * z[j].abs().max(1e-3);
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let col = (eval(&zp)? - eval(&zm)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let dz = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| SimError::BadScenario("singular closed-loop Jacobian".into()))?;
        let mut t = 1.0;
        let mut advanced = false;
        while t >= 1e-12 {
            let z_new = &z + t * &dz;
            if let Ok(f_new) = eval(&z_new) {
                if f_new.norm() < f.norm() {
                    z = z_new;
                    f = f_new;
                    advanced = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !advanced {
            // at the floating-point floor of the residual
            break;
        }
    }
    if f.norm() <= stall_tol {
        let x = z.rows(0, n).into_owned();
        let x_c = z.rows(n, m).into_owned();
        Ok((x, x_c))
    } else {
        Err(SimError::BadScenario(format!(
            "equilibrium search did not converge (residual {:e})",
            f.norm()
        )))
    }
}

/// Means over a trailing window of a converged stretch of trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyWindow {
    pub x: State,
    pub x_c: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// Largest componentwise spread in the window, relative to the state
    /// scale.
    pub variation: f64,
}

/// Steady state over the trailing `window` seconds of the whole trajectory.
///
/// Returns the window means when the componentwise spread stays below `tol`
/// relative to the largest mean state magnitude; otherwise `None`.
pub fn steady_state(traj: &Trajectory, window: f64, tol: f64) -> Option<SteadyWindow> {
    let t_end = *traj.times.last()?;
    steady_state_at(traj, t_end, window, tol)
}

/// Steady state over the window `[t_end - window, t_end]`.
pub fn steady_state_at(traj: &Trajectory, t_end: f64, window: f64, tol: f64) -> Option<SteadyWindow> {
    if traj.is_empty() {
        return None;
    }
    let i_hi = traj.index_at(t_end);
    let i_lo = traj.index_at(t_end - window);
    if i_hi <= i_lo + 1 {
        return None;
    }
    let slice = i_lo..=i_hi;
    let n = traj.states[0].len();
    let count = (i_hi - i_lo + 1) as f64;

    let mut mean_x = DVector::zeros(n);
    let mut mean_xc = DVector::zeros(traj.controller_states[0].len());
    let mut mean_u = DVector::zeros(traj.controls[0].len());
    let mut mean_y = DVector::zeros(traj.outputs[0].len());
    let mut lo = DVector::from_element(n, f64::INFINITY);
    let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
    for i in slice {
        let x = &traj.states[i];
        mean_x += x;
        mean_xc += &traj.controller_states[i];
        mean_u += &traj.controls[i];
        mean_y += &traj.outputs[i];
        for j in 0..n {
            lo[j] = lo[j].min(x[j]);
            hi[j] = hi[j].max(x[j]);
        }
    }
    mean_x /= count;
    mean_xc /= count;
    mean_u /= count;
    mean_y /= count;

    let scale = mean_x.abs().max().max(f64::MIN_POSITIVE);
    let variation = (0..n).map(|j| (hi[j] - lo[j]) / scale).fold(0.0, f64::max);
    if !variation.is_finite() || variation > tol {
        return None;
    }
    Some(SteadyWindow { x: mean_x, x_c: mean_xc, u: mean_u, y: mean_y, variation })
}

/// Result of an exponential-envelope check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeReport {
    pub holds: bool,
    /// Tightest ratio `V(t) / (V(0) exp(-alpha t))` seen along the samples.
    pub worst_ratio: f64,
}

/// Checks `V(t) <= V(0) exp(-alpha t) (1 + slack)` along the samples of a
/// trajectory; `alpha = 0` reduces to a monotone-decrease check.
pub fn exponential_envelope(
    traj: &Trajectory,
    lyap: &Lyapunov,
    alpha: f64,
    slack: f64,
) -> EnvelopeReport {
    let values: Vec<f64> = match &traj.lyapunov {
        Some(v) => v.clone(),
        None => traj
            .states
            .iter()
            .zip(traj.controller_states.iter())
            .map(|(x, xc)| lyap.value(x, xc))
            .collect(),
    };
    if values.is_empty() {
        return EnvelopeReport { holds: true, worst_ratio: 0.0 };
    }
    let v0 = values[0];
    let t0 = traj.times[0];
    if v0 <= 0.0 {
        let holds = values.iter().all(|v| *v <= 1e-12);
        return EnvelopeReport { holds, worst_ratio: if holds { 1.0 } else { f64::INFINITY } };
    }
    let mut worst: f64 = 0.0;
    let mut holds = true;
    for (t, v) in traj.times.iter().zip(values.iter()) {
        let bound = v0 * (-alpha * (t - t0)).exp();
        let ratio = v / bound;
        worst = worst.max(ratio);
        if *v > bound * (1.0 + slack) {
            holds = false;
        }
    }
    EnvelopeReport { holds, worst_ratio: worst }
}
