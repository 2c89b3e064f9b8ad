//! Scenario and system files (TOML), trajectory CSV export.
//!
//! Keys carry their unit in the name (`L_mH`, `v0_V`, `Vd_kV`), which keeps
//! milli/base mix-ups out of the configurations. Every file format is
//! versioned through a `format_version` field.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::apps::boost::BoostParams;
use crate::apps::vsc::VscParams;
use crate::controllers::{ControllerConfig, Gains, MonotoneSpec};
use crate::error::FileError;
use crate::phs::{PhSystem, State};
use crate::sim::{Change, Event, Scenario, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

/// Default monotone-map steepness when a scenario omits it.
pub const DEFAULT_LAMBDA: f64 = 10.0;

// ---------------------------------------------------------------------------
// file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemSection {
    Boost(BoostSection),
    Vsc(VscSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostSection {
    #[serde(rename = "L_mH")]
    pub l_mh: f64,
    #[serde(rename = "C_mF")]
    pub c_mf: f64,
    #[serde(rename = "R_mOhm")]
    pub r_mohm: f64,
    #[serde(rename = "G_mS")]
    pub g_ms: f64,
    #[serde(rename = "v0_V")]
    pub v0_v: f64,
    #[serde(rename = "G0_hat_mS")]
    pub g0_hat_ms: f64,
    #[serde(rename = "G0_actual_mS")]
    pub g0_actual_ms: f64,
    #[serde(rename = "i0_hat_A")]
    pub i0_hat_a: f64,
    #[serde(rename = "i0_actual_A")]
    pub i0_actual_a: f64,
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VscSection {
    #[serde(rename = "L_mH")]
    pub l_mh: f64,
    #[serde(rename = "C_uF")]
    pub c_uf: f64,
    #[serde(rename = "R_Ohm")]
    pub r_ohm: f64,
    #[serde(rename = "G_mS")]
    pub g_ms: f64,
    #[serde(rename = "f_Hz")]
    pub f_hz: f64,
    #[serde(rename = "Vd_kV")]
    pub vd_kv: f64,
    #[serde(rename = "V2_hat_kV")]
    pub v2_hat_kv: f64,
    #[serde(rename = "V2_actual_kV")]
    pub v2_actual_kv: f64,
    #[serde(rename = "R_T_Ohm")]
    pub r_t_ohm: [f64; 3],
    #[serde(rename = "L_T_mH")]
    pub l_t_mh: [f64; 3],
}

/// A gain entry: one scalar for all channels or one value per channel
/// (diagonal gain matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainValue {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl GainValue {
    fn to_matrix(&self, m: usize, name: &str, path: &str) -> Result<DMatrix<f64>, FileError> {
        match self {
            GainValue::Scalar(v) => Ok(DMatrix::from_diagonal_element(m, m, *v)),
            GainValue::PerChannel(vals) if vals.len() == m => {
                Ok(DMatrix::from_diagonal(&DVector::from_row_slice(vals)))
            }
            GainValue::PerChannel(vals) => Err(FileError::Invalid {
                path: path.into(),
                message: format!("{name} needs {m} channel values, got {}", vals.len()),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// One of `pid`, `plid`, `mpid`, `mplid`.
    pub variant: String,
    #[serde(rename = "K_P")]
    pub k_p: GainValue,
    #[serde(rename = "K_I")]
    pub k_i: GainValue,
    #[serde(rename = "K_D")]
    pub k_d: GainValue,
    #[serde(rename = "K_L", skip_serializing_if = "Option::is_none")]
    pub k_l: Option<GainValue>,
    /// Monotone-map steepness (monotone variants only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub duration_s: f64,
    pub dt_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decimate: Option<usize>,
}

/// Demanded operating point; the remaining components come from the
/// estimated power flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(rename = "v_ref_V", skip_serializing_if = "Option::is_none")]
    pub v_ref_v: Option<f64>,
    #[serde(rename = "p_ref_MW", skip_serializing_if = "Option::is_none")]
    pub p_ref_mw: Option<f64>,
    #[serde(rename = "q_ref_MW", skip_serializing_if = "Option::is_none")]
    pub q_ref_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(rename = "i_L_A", skip_serializing_if = "Option::is_none")]
    pub i_l_a: Option<f64>,
    #[serde(rename = "v_C_V", skip_serializing_if = "Option::is_none")]
    pub v_c_v: Option<f64>,
    #[serde(rename = "i_d_A", skip_serializing_if = "Option::is_none")]
    pub i_d_a: Option<f64>,
    #[serde(rename = "i_q_A", skip_serializing_if = "Option::is_none")]
    pub i_q_a: Option<f64>,
    #[serde(rename = "v1_kV", skip_serializing_if = "Option::is_none")]
    pub v1_kv: Option<f64>,
    #[serde(rename = "i_T_A", skip_serializing_if = "Option::is_none")]
    pub i_t_a: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub t_s: f64,
    #[serde(rename = "set_v_ref_V", skip_serializing_if = "Option::is_none")]
    pub set_v_ref_v: Option<f64>,
    #[serde(rename = "set_p_ref_MW", skip_serializing_if = "Option::is_none")]
    pub set_p_ref_mw: Option<f64>,
    #[serde(rename = "set_q_ref_MW", skip_serializing_if = "Option::is_none")]
    pub set_q_ref_mw: Option<f64>,
    #[serde(rename = "set_i0_A", skip_serializing_if = "Option::is_none")]
    pub set_i0_a: Option<f64>,
    #[serde(rename = "set_G0_mS", skip_serializing_if = "Option::is_none")]
    pub set_g0_ms: Option<f64>,
    #[serde(rename = "set_V2_kV", skip_serializing_if = "Option::is_none")]
    pub set_v2_kv: Option<f64>,
    #[serde(rename = "set_K_P", skip_serializing_if = "Option::is_none")]
    pub set_k_p: Option<GainValue>,
    #[serde(rename = "set_K_I", skip_serializing_if = "Option::is_none")]
    pub set_k_i: Option<GainValue>,
    #[serde(rename = "set_K_D", skip_serializing_if = "Option::is_none")]
    pub set_k_d: Option<GainValue>,
    #[serde(rename = "set_K_L", skip_serializing_if = "Option::is_none")]
    pub set_k_l: Option<GainValue>,
}

/// A standalone system file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub format_version: u32,
    pub system: SystemSection,
}

/// A full scenario file: system, controller, plan, reference and events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub system: SystemSection,
    pub controller: ControllerSection,
    pub simulation: SimulationSection,
    pub reference: ReferenceSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSection>,
}

// ---------------------------------------------------------------------------
// parsing and building
// ---------------------------------------------------------------------------

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &str) -> Result<T, FileError> {
    toml::from_str(text).map_err(|e| FileError::Parse { path: path.into(), message: e.to_string() })
}

fn check_version(found: u32, path: &str) -> Result<(), FileError> {
    if found != FORMAT_VERSION {
        return Err(FileError::Version { path: path.into(), found, expected: FORMAT_VERSION });
    }
    Ok(())
}

impl SystemFile {
    pub fn parse(text: &str, path: &str) -> Result<Self, FileError> {
        let file: SystemFile = parse_toml(text, path)?;
        check_version(file.format_version, path)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("system file serializes")
    }
}

impl ScenarioFile {
    pub fn parse(text: &str, path: &str) -> Result<Self, FileError> {
        let file: ScenarioFile = parse_toml(text, path)?;
        check_version(file.format_version, path)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario file serializes")
    }
}

impl BoostSection {
    pub fn to_params(&self, path: &str) -> Result<BoostParams, FileError> {
        let p = BoostParams {
            l: self.l_mh * 1e-3,
            c: self.c_mf * 1e-3,
            r: self.r_mohm * 1e-3,
            g: self.g_ms * 1e-3,
            v0: self.v0_v,
            g0_hat: self.g0_hat_ms * 1e-3,
            g0_actual: self.g0_actual_ms * 1e-3,
            i0_hat: self.i0_hat_a,
            i0_actual: self.i0_actual_a,
            u_min: self.u_min,
            u_max: self.u_max,
        };
        p.validate().map_err(|message| FileError::Invalid { path: path.into(), message })?;
        Ok(p)
    }

    pub fn from_params(p: &BoostParams) -> Self {
        Self {
            l_mh: p.l * 1e3,
            c_mf: p.c * 1e3,
            r_mohm: p.r * 1e3,
            g_ms: p.g * 1e3,
            v0_v: p.v0,
            g0_hat_ms: p.g0_hat * 1e3,
            g0_actual_ms: p.g0_actual * 1e3,
            i0_hat_a: p.i0_hat,
            i0_actual_a: p.i0_actual,
            u_min: p.u_min,
            u_max: p.u_max,
        }
    }
}

impl VscSection {
    pub fn to_params(&self, path: &str) -> Result<VscParams, FileError> {
        let p = VscParams {
            l: self.l_mh * 1e-3,
            c: self.c_uf * 1e-6,
            r: self.r_ohm,
            g: self.g_ms * 1e-3,
            omega: 2.0 * std::f64::consts::PI * self.f_hz,
            v_d: self.vd_kv * 1e3,
            v2_hat: self.v2_hat_kv * 1e3,
            v2_actual: self.v2_actual_kv * 1e3,
            r_t: self.r_t_ohm,
            l_t: [self.l_t_mh[0] * 1e-3, self.l_t_mh[1] * 1e-3, self.l_t_mh[2] * 1e-3],
            u_bound: crate::apps::vsc::U_BOUND,
        };
        p.validate().map_err(|message| FileError::Invalid { path: path.into(), message })?;
        Ok(p)
    }

    pub fn from_params(p: &VscParams) -> Self {
        Self {
            l_mh: p.l * 1e3,
            c_uf: p.c * 1e6,
            r_ohm: p.r,
            g_ms: p.g * 1e3,
            f_hz: p.omega / (2.0 * std::f64::consts::PI),
            vd_kv: p.v_d * 1e-3,
            v2_hat_kv: p.v2_hat * 1e-3,
            v2_actual_kv: p.v2_actual * 1e-3,
            r_t_ohm: p.r_t,
            l_t_mh: [p.l_t[0] * 1e3, p.l_t[1] * 1e3, p.l_t[2] * 1e3],
        }
    }
}

/// Application parameters decoded from a system section.
#[derive(Debug, Clone, PartialEq)]
pub enum App {
    Boost(BoostParams),
    Vsc(VscParams),
}

impl App {
    pub fn from_section(section: &SystemSection, path: &str) -> Result<Self, FileError> {
        Ok(match section {
            SystemSection::Boost(s) => App::Boost(s.to_params(path)?),
            SystemSection::Vsc(s) => App::Vsc(s.to_params(path)?),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            App::Boost(_) => 1,
            App::Vsc(_) => 2,
        }
    }

    pub fn build_actual(&self) -> Result<PhSystem, crate::error::PhsError> {
        match self {
            App::Boost(p) => p.build_actual(),
            App::Vsc(p) => p.build_actual(),
        }
    }

    pub fn build_estimated(&self) -> Result<PhSystem, crate::error::PhsError> {
        match self {
            App::Boost(p) => p.build_estimated(),
            App::Vsc(p) => p.build_estimated(),
        }
    }

    /// CSV column names of the co-energy variables.
    pub fn coenergy_headers(&self) -> Vec<&'static str> {
        match self {
            App::Boost(_) => vec!["i_L_A", "v_C_V"],
            App::Vsc(_) => vec!["i_d_A", "i_q_A", "v1_V", "i_T1_A", "i_T2_A", "i_T3_A"],
        }
    }

    pub fn coenergy_row(&self, x: &State) -> Vec<f64> {
        match self {
            App::Boost(p) => {
                let (i, v) = p.coenergy_of(x);
                vec![i, v]
            }
            App::Vsc(p) => p.coenergy_of(x).to_vec(),
        }
    }

    /// Reference completion through the estimated power flow.
    pub fn reference(&self, section: &ReferenceSection, path: &str) -> Result<State, FileError> {
        match self {
            App::Boost(p) => {
                let v = section.v_ref_v.ok_or_else(|| FileError::Invalid {
                    path: path.into(),
                    message: "boost reference needs v_ref_V".into(),
                })?;
                let (x_star, _) = p
                    .reference_for_voltage(v)
                    .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;
                Ok(x_star)
            }
            App::Vsc(p) => {
                let pw = section.p_ref_mw.ok_or_else(|| FileError::Invalid {
                    path: path.into(),
                    message: "vsc reference needs p_ref_MW".into(),
                })?;
                let qw = section.q_ref_mw.unwrap_or(0.0);
                let i_d = p.current_for_power(pw * 1e6);
                let i_q = p.current_for_power(qw * 1e6);
                let (x_star, _) = p
                    .reference_for_currents(i_d, i_q)
                    .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;
                Ok(x_star)
            }
        }
    }
}

/// Everything needed to run: models, controller and plan.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub app: App,
    pub actual: PhSystem,
    pub estimated: PhSystem,
    pub cfg: ControllerConfig,
    pub scenario: Scenario,
}

impl ControllerSection {
    pub fn gains(&self, m: usize, path: &str) -> Result<Gains, FileError> {
        let needs_leak = matches!(self.variant.as_str(), "plid" | "mplid");
        if needs_leak && self.k_l.is_none() {
            return Err(FileError::Invalid {
                path: path.into(),
                message: format!("variant {} requires K_L", self.variant),
            });
        }
        let k_l = match (&self.k_l, needs_leak || self.k_l.is_some()) {
            (Some(v), _) => Some(v.to_matrix(m, "K_L", path)?),
            (None, _) => None,
        };
        Gains::new(
            self.k_p.to_matrix(m, "K_P", path)?,
            self.k_i.to_matrix(m, "K_I", path)?,
            self.k_d.to_matrix(m, "K_D", path)?,
            k_l,
        )
        .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })
    }

    pub fn monotone_spec(&self, app: &App, path: &str) -> Result<MonotoneSpec, FileError> {
        match self.variant.as_str() {
            "pid" | "plid" => Ok(MonotoneSpec::None),
            "mpid" | "mplid" => {
                let lambda = self.lambda.unwrap_or(DEFAULT_LAMBDA);
                let (u_min, u_max) = match app {
                    App::Boost(p) => (p.u_min, p.u_max),
                    App::Vsc(p) => (-p.u_bound, p.u_bound),
                };
                Ok(MonotoneSpec::Tanh { u_min, u_max, lambda })
            }
            other => Err(FileError::Invalid {
                path: path.into(),
                message: format!("unknown controller variant {other:?}"),
            }),
        }
    }
}

impl ScenarioFile {
    /// Resolves the file into models, controller configuration and plan.
    pub fn build(&self, path: &str) -> Result<BuiltScenario, FileError> {
        let app = App::from_section(&self.system, path)?;
        let actual = app
            .build_actual()
            .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;
        let estimated = app
            .build_estimated()
            .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;
        let m = app.input_dim();
        let gains = self.controller.gains(m, path)?;
        let spec = self.controller.monotone_spec(&app, path)?;
        let x_star = app.reference(&self.reference, path)?;
        let cfg = ControllerConfig::new(&estimated, gains, x_star.clone(), spec)
            .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;

        let initial_state = self.initial_state(&app, &x_star, path)?;
        let initial_xc = self.initial.as_ref().and_then(|i| i.x_c.as_ref()).map(|xc| {
            DVector::from_row_slice(xc)
        });
        let mut scenario = Scenario::new(self.simulation.duration_s, self.simulation.dt_s, initial_state);
        scenario.decimate = self.simulation.decimate.unwrap_or(1);
        scenario.initial_xc = initial_xc;
        for ev in &self.events {
            scenario.events.push(self.build_event(&app, ev, path)?);
        }
        let built = BuiltScenario { app, actual, estimated, cfg, scenario };
        built
            .scenario
            .validate()
            .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;
        Ok(built)
    }

    fn initial_state(&self, app: &App, x_star: &State, path: &str) -> Result<State, FileError> {
        let Some(init) = &self.initial else { return Ok(x_star.clone()) };
        match app {
            App::Boost(p) => {
                let (i_star, v_star) = p.coenergy_of(x_star);
                let i = init.i_l_a.unwrap_or(i_star);
                let v = init.v_c_v.unwrap_or(v_star);
                Ok(p.state_from_coenergy(i, v))
            }
            App::Vsc(p) => {
                let z = p.coenergy_of(x_star);
                let i_d = init.i_d_a.unwrap_or(z[0]);
                let i_q = init.i_q_a.unwrap_or(z[1]);
                let v1 = init.v1_kv.map(|v| v * 1e3).unwrap_or(z[2]);
                let i_t = init.i_t_a.unwrap_or([z[3], z[4], z[5]]);
                let _ = path;
                Ok(p.state_from_coenergy(i_d, i_q, v1, i_t))
            }
        }
    }

    fn build_event(&self, app: &App, ev: &EventSection, path: &str) -> Result<Event, FileError> {
        let mut changes = Vec::new();
        match app {
            App::Boost(p) => {
                if ev.set_p_ref_mw.is_some() || ev.set_q_ref_mw.is_some() || ev.set_v2_kv.is_some() {
                    return Err(FileError::Invalid {
                        path: path.into(),
                        message: format!("event at {} s uses vsc fields on a boost system", ev.t_s),
                    });
                }
                // source and dissipation changes first, then references
                if let Some(i0) = ev.set_i0_a {
                    changes.push(Change::SetSources { e: DVector::from_vec(vec![p.v0, -i0]) });
                }
                if let Some(g0_ms) = ev.set_g0_ms {
                    let r = DMatrix::from_diagonal(&DVector::from_vec(vec![
                        p.r,
                        p.g + g0_ms * 1e-3,
                    ]));
                    changes.push(Change::SetDissipation { r });
                }
                if let Some(v) = ev.set_v_ref_v {
                    let (x_star, _) = p.reference_for_voltage(v).map_err(|e| FileError::Invalid {
                        path: path.into(),
                        message: format!("event at {} s: {e}", ev.t_s),
                    })?;
                    changes.push(Change::SetReference { x_star });
                }
            }
            App::Vsc(p) => {
                if ev.set_v_ref_v.is_some() || ev.set_i0_a.is_some() || ev.set_g0_ms.is_some() {
                    return Err(FileError::Invalid {
                        path: path.into(),
                        message: format!("event at {} s uses boost fields on a vsc system", ev.t_s),
                    });
                }
                if let Some(v2_kv) = ev.set_v2_kv {
                    let v2 = v2_kv * 1e3;
                    changes.push(Change::SetSources {
                        e: DVector::from_vec(vec![-p.v_d, 0.0, 0.0, v2, v2, v2]),
                    });
                }
                if ev.set_p_ref_mw.is_some() || ev.set_q_ref_mw.is_some() {
                    let pw = ev.set_p_ref_mw.ok_or_else(|| FileError::Invalid {
                        path: path.into(),
                        message: format!("event at {} s needs set_p_ref_MW with set_q_ref_MW", ev.t_s),
                    })?;
                    let qw = ev.set_q_ref_mw.unwrap_or(0.0);
                    let i_d = p.current_for_power(pw * 1e6);
                    let i_q = p.current_for_power(qw * 1e6);
                    let (x_star, _) =
                        p.reference_for_currents(i_d, i_q).map_err(|e| FileError::Invalid {
                            path: path.into(),
                            message: format!("event at {} s: {e}", ev.t_s),
                        })?;
                    changes.push(Change::SetReference { x_star });
                }
            }
        }
        if let (Some(kp), Some(ki), Some(kd)) = (&ev.set_k_p, &ev.set_k_i, &ev.set_k_d) {
            let m = app.input_dim();
            let k_l = ev.set_k_l.as_ref().map(|v| v.to_matrix(m, "set_K_L", path)).transpose()?;
            let gains = Gains::new(
                kp.to_matrix(m, "set_K_P", path)?,
                ki.to_matrix(m, "set_K_I", path)?,
                kd.to_matrix(m, "set_K_D", path)?,
                k_l,
            )
            .map_err(|e| FileError::Invalid { path: path.into(), message: e.to_string() })?;
            changes.push(Change::SetGains { gains });
        } else if ev.set_k_p.is_some() || ev.set_k_i.is_some() || ev.set_k_d.is_some() {
            return Err(FileError::Invalid {
                path: path.into(),
                message: format!("event at {} s must set K_P, K_I and K_D together", ev.t_s),
            });
        }
        if changes.is_empty() {
            return Err(FileError::Invalid {
                path: path.into(),
                message: format!("event at {} s changes nothing", ev.t_s),
            });
        }
        Ok(Event { t: ev.t_s, changes })
    }
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Writes the trajectory as CSV: `time_s`, the co-energy variables, the
/// control channels, the passive-output channels, `hamiltonian_J` and
/// `lyapunov_J` when recorded.
pub fn write_csv<W: Write>(app: &App, traj: &Trajectory, out: &mut W) -> std::io::Result<()> {
    let mut header = vec!["time_s".to_string()];
    header.extend(app.coenergy_headers().iter().map(|s| s.to_string()));
    let m = app.input_dim();
    if m == 1 {
        header.push("u".into());
        header.push("y_W".into());
    } else {
        header.push("u_d".into());
        header.push("u_q".into());
        header.push("y_d_W".into());
        header.push("y_q_W".into());
    }
    header.push("hamiltonian_J".into());
    if traj.lyapunov.is_some() {
        header.push("lyapunov_J".into());
    }
    writeln!(out, "{}", header.join(","))?;

    for k in 0..traj.len() {
        let mut row: Vec<String> = vec![format!("{}", traj.times[k])];
        for v in app.coenergy_row(&traj.states[k]) {
            row.push(format!("{v}"));
        }
        for v in traj.controls[k].iter() {
            row.push(format!("{v}"));
        }
        for v in traj.outputs[k].iter() {
            row.push(format!("{v}"));
        }
        row.push(format!("{}", traj.hamiltonian[k]));
        if let Some(l) = &traj.lyapunov {
            row.push(format!("{}", l[k]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
