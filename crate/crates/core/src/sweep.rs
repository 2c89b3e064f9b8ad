//! Parameter sweeps: many variations of one scenario run independently, in
//! parallel when the `parallel` feature is on.

use nalgebra::DVector;

use crate::controllers::{ControllerConfig, Gains, Monotone, MonotoneSpec};
use crate::files::{App, BuiltScenario};
use crate::par;
use crate::phs::State;
use crate::sim::{run_scenario, steady_state, Scenario};

/// Which quantity a sweep case overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    KP,
    KI,
    KD,
    KL,
    Lambda,
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "k_p" | "kp" => Ok(SweepParam::KP),
            "k_i" | "ki" => Ok(SweepParam::KI),
            "k_d" | "kd" => Ok(SweepParam::KD),
            "k_l" | "kl" => Ok(SweepParam::KL),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(format!("unknown sweep parameter {other:?} (try K_P, K_I, K_D, K_L, lambda)")),
        }
    }
}

/// One sweep case: an optional scalar override and an optional initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCase {
    pub label: String,
    pub param: Option<(SweepParam, f64)>,
    pub initial: Option<State>,
}

/// Outcome summary of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub label: String,
    pub error: Option<String>,
    pub max_abs_u: f64,
    pub steady: Option<SteadySummary>,
}

/// Trailing-window means of a converged case.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadySummary {
    pub coenergy: Vec<f64>,
    pub u: Vec<f64>,
    /// Largest per-unit deviation of the steady state from the reference,
    /// over components with a nonzero reference.
    pub delta_x: f64,
}

fn scalar_times_identity(cfg: &ControllerConfig, value: f64) -> nalgebra::DMatrix<f64> {
    let m = cfg.gains.dim();
    nalgebra::DMatrix::from_diagonal_element(m, m, value)
}

fn apply_case(base: &BuiltScenario, case: &SweepCase) -> Result<(ControllerConfig, Scenario), String> {
    let mut gains = base.cfg.gains.clone();
    let mut spec = match &base.cfg.monotone {
        None => MonotoneSpec::None,
        Some(Monotone::Identity) => MonotoneSpec::Identity,
        Some(Monotone::Tanh(map)) => MonotoneSpec::Tanh {
            u_min: map.u_min[0],
            u_max: map.u_max[0],
            lambda: map.lambda[0],
        },
    };
    if let Some((param, value)) = &case.param {
        match param {
            SweepParam::KP => gains.k_p = scalar_times_identity(&base.cfg, *value),
            SweepParam::KI => gains.k_i = scalar_times_identity(&base.cfg, *value),
            SweepParam::KD => gains.k_d = scalar_times_identity(&base.cfg, *value),
            SweepParam::KL => gains.k_l = Some(scalar_times_identity(&base.cfg, *value)),
            SweepParam::Lambda => match &mut spec {
                MonotoneSpec::Tanh { lambda, .. } => *lambda = *value,
                _ => return Err("lambda sweep needs a monotone controller".into()),
            },
        }
    }
    let gains = Gains::new(gains.k_p, gains.k_i, gains.k_d, gains.k_l).map_err(|e| e.to_string())?;
    let cfg = ControllerConfig::new(&base.estimated, gains, base.cfg.x_star.clone(), spec)
        .map_err(|e| e.to_string())?;
    let mut scenario = base.scenario.clone();
    if let Some(x0) = &case.initial {
        scenario.initial_state = x0.clone();
        scenario.initial_xc = None;
    }
    Ok((cfg, scenario))
}

fn run_case(base: &BuiltScenario, case: &SweepCase, window: f64, tol: f64) -> SweepOutcome {
    let mut outcome =
        SweepOutcome { label: case.label.clone(), error: None, max_abs_u: 0.0, steady: None };
    let (cfg, scenario) = match apply_case(base, case) {
        Ok(v) => v,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };
    let traj = match run_scenario(&base.actual, &base.estimated, &cfg, &scenario, None) {
        Ok(t) => t,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.max_abs_u = traj
        .controls
        .iter()
        .flat_map(|u| u.iter())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some(ss) = steady_state(&traj, window, tol) {
        outcome.steady = Some(SteadySummary {
            coenergy: base.app.coenergy_row(&ss.x),
            u: ss.u.iter().copied().collect(),
            delta_x: per_unit_deviation(&base.app, &cfg.x_star, &ss.x),
        });
    }
    outcome
}

fn per_unit_deviation(app: &App, x_star: &State, x_bar: &State) -> f64 {
    let z_star = app.coenergy_row(x_star);
    let z_bar = app.coenergy_row(x_bar);
    let scale = z_star.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    z_star
        .iter()
        .zip(z_bar.iter())
        .filter(|(s, _)| s.abs() > 1e-9 * scale)
        .map(|(s, b)| ((b - s) / s).abs())
        .fold(0.0, f64::max)
}

/// Runs every case, fanning out over the rayon pool when the `parallel`
/// feature is enabled.
pub fn run_sweep(base: &BuiltScenario, cases: &[SweepCase], window: f64, tol: f64) -> Vec<SweepOutcome> {
    par::map_slice(cases, |case| run_case(base, case, window, tol))
}

/// Always-sequential variant, kept for baseline comparisons.
pub fn run_sweep_seq(
    base: &BuiltScenario,
    cases: &[SweepCase],
    window: f64,
    tol: f64,
) -> Vec<SweepOutcome> {
    par::map_slice_seq(cases, |case| run_case(base, case, window, tol))
}

/// Cases for a list of scalar values of one parameter.
pub fn cases_for_values(param: SweepParam, values: &[f64]) -> Vec<SweepCase> {
    values
        .iter()
        .map(|v| SweepCase { label: format!("{param:?}={v:e}"), param: Some((param, *v)), initial: None })
        .collect()
}

/// Cases with randomized initial co-energy states inside a relative ball
/// around the scenario's initial state. A simple deterministic congruential
/// stream keeps the sweep reproducible from the seed.
pub fn cases_for_random_initials(base: &BuiltScenario, count: usize, radius: f64, seed: u64) -> Vec<SweepCase> {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).max(1);
    let mut next = move || {
        // xorshift64*
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        let bits = state.wrapping_mul(0x2545F4914F6CDD1D);
        (bits >> 11) as f64 / (1u64 << 53) as f64
    };
    let x0 = &base.scenario.initial_state;
    (0..count)
        .map(|k| {
            let x = DVector::from_fn(x0.len(), |i, _| {
                let span = 2.0 * next() - 1.0;
                x0[i] * (1.0 + radius * span)
            });
            SweepCase { label: format!("ic{k}"), param: None, initial: Some(x) }
        })
        .collect()
}

/// Formats outcomes as an aligned text table.
pub fn format_table(outcomes: &[SweepOutcome]) -> String {
    let mut out = String::from("case | converged | steady co-energy | steady u | max |u| | deviation\n");
    for o in outcomes {
        if let Some(err) = &o.error {
            out.push_str(&format!("{} | ERROR: {err}\n", o.label));
            continue;
        }
        match &o.steady {
            Some(ss) => {
                let coe = ss.coenergy.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
                let u = ss.u.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ");
                out.push_str(&format!(
                    "{} | yes | {} | {} | {:.6} | {:.3e}\n",
                    o.label, coe, u, o.max_abs_u, ss.delta_x
                ));
            }
            None => {
                out.push_str(&format!("{} | no | - | - | {:.6} | -\n", o.label, o.max_abs_u));
            }
        }
    }
    out
}
