//! Command-line front end for the converter control toolkit.
//!
//! Subcommands: `simulate` (trajectory CSV + summary), `certify`
//! (stability-certificate report), `equilibrium` (reference completion and
//! robustness report) and `sweep` (parallel gain/initial-condition sweeps).
//!
//! Exit codes: 0 success, 1 infeasible demand or failed run, 2 bad usage or
//! unparsable files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use pidpbc::controllers::Variant;
use pidpbc::equilibria::{equilibrium_control, gamma};
use pidpbc::error::FileError;
use pidpbc::files::{App, BuiltScenario, ScenarioFile, SystemFile};
use pidpbc::report::{certificate_report, flow_report};
use pidpbc::sim::{find_equilibrium, run_scenario, steady_state, Trajectory};
use pidpbc::stability::{
    mplid_certificate_with_xc, pid_certificate, plid_certificate, Lyapunov, StabilityCertificate,
};
use pidpbc::sweep::{
    cases_for_random_initials, cases_for_values, format_table, run_sweep, SweepCase, SweepParam,
};

#[derive(Parser)]
#[command(
    name = "pidpbc",
    about = "Passivity-based PID control of power converters: simulate, certify, analyze",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario file and export the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Evaluate the stability certificate of the configured controller at
    /// the closed-loop equilibrium.
    Certify(CertifyArgs),
    /// Complete a demanded operating point through the estimated power flow
    /// and report its robustness against the actual parameters.
    Equilibrium(EquilibriumArgs),
    /// Run many variations of one scenario and print a summary table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output CSV path (defaults to the scenario name with .csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the integration step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the duration, seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Override the sample decimation.
    #[arg(long)]
    decimate: Option<usize>,
    /// Record the incremental energy function along the run.
    #[arg(long)]
    lyapunov: bool,
}

#[derive(Args)]
struct CertifyArgs {
    /// Scenario file carrying the system, gains and reference.
    scenario: PathBuf,
    /// Write the report here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EquilibriumArgs {
    /// System file (TOML).
    system: PathBuf,
    /// Demanded capacitor voltage, volt (boost).
    #[arg(long)]
    vref: Option<f64>,
    /// Demanded active power, MW (vsc).
    #[arg(long)]
    pref_mw: Option<f64>,
    /// Demanded reactive power, MW (vsc).
    #[arg(long)]
    qref_mw: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario file used as the base case.
    scenario: PathBuf,
    /// Parameter to sweep: K_P, K_I, K_D, K_L or lambda.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated list of values for --param.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Add this many randomized initial conditions.
    #[arg(long, default_value_t = 0)]
    random_ics: usize,
    /// Relative radius of the initial-condition ball.
    #[arg(long, default_value_t = 0.2)]
    ic_radius: f64,
    /// Seed for the randomized cases.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (parallel builds only).
    #[arg(long)]
    workers: Option<usize>,
    /// Steady-state detection window, seconds.
    #[arg(long, default_value_t = 0.1)]
    window: f64,
    /// Steady-state relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Write the table here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Certify(a) => certify(a),
        Command::Equilibrium(a) => equilibrium(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug)]
enum CliError {
    File(FileError),
    Infeasible(String),
    Run(String),
    Usage(String),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::File(e) => write!(f, "{e}"),
            CliError::Infeasible(m) | CliError::Run(m) | CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::File(_) | CliError::Usage(_) => 2,
            CliError::Infeasible(_) | CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::File(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn load_scenario(path: &Path) -> Result<BuiltScenario, CliError> {
    let file = ScenarioFile::load(path)?;
    Ok(file.build(&path.display().to_string())?)
}

fn configure_workers(workers: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if workers.is_some() {
        eprintln!("note: built without the parallel feature; --workers ignored");
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut built = load_scenario(&args.scenario)?;
    if let Some(dt) = args.dt {
        built.scenario.dt = dt;
    }
    if let Some(duration) = args.duration {
        built.scenario.duration = duration;
    }
    if let Some(decimate) = args.decimate {
        built.scenario.decimate = decimate;
    }
    let lyap = if args.lyapunov {
        let (x_bar, _) = closed_loop_equilibrium(&built)?;
        Some(
            Lyapunov::for_config(&built.actual, &built.cfg, &x_bar, 0.0)
                .map_err(|e| CliError::Run(e.to_string()))?,
        )
    } else {
        None
    };
    let traj = run_scenario(
        &built.actual,
        &built.estimated,
        &built.cfg,
        &built.scenario,
        lyap.as_ref(),
    )
    .map_err(|e| CliError::Run(e.to_string()))?;

    let out_path = args
        .out
        .unwrap_or_else(|| args.scenario.with_extension("csv"));
    let mut file = std::fs::File::create(&out_path)?;
    pidpbc::files::write_csv(&built.app, &traj, &mut file)?;
    print_summary(&built, &traj, &out_path);
    Ok(())
}

fn print_summary(built: &BuiltScenario, traj: &Trajectory, out_path: &Path) {
    println!("samples: {}", traj.len());
    println!("csv: {}", out_path.display());
    let z = built.app.coenergy_row(traj.states.last().expect("nonempty"));
    let names = built.app.coenergy_headers();
    let formatted: Vec<String> =
        names.iter().zip(z.iter()).map(|(n, v)| format!("{n}={v:.4}")).collect();
    println!("final state: {}", formatted.join(" "));
    let max_u = traj
        .controls
        .iter()
        .flat_map(|u| u.iter())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    println!("max |u|: {max_u:.6}");
    let window = 0.1 * (traj.times.last().unwrap() - traj.times[0]);
    match steady_state(traj, window, 1e-3) {
        Some(ss) => {
            let z = built.app.coenergy_row(&ss.x);
            let formatted: Vec<String> =
                names.iter().zip(z.iter()).map(|(n, v)| format!("{n}={v:.4}")).collect();
            println!("steady state (trailing {window:.3} s): {}", formatted.join(" "));
        }
        None => println!("steady state (trailing {window:.3} s): not reached"),
    }
}

/// Robustness report appropriate to the application: the generic power-flow
/// scalars for rank-(n-1) converters, the reduced line-aware form for the
/// VSC.
fn app_gamma(built: &BuiltScenario) -> Result<pidpbc::equilibria::PowerFlowReport, CliError> {
    match &built.app {
        App::Boost(_) => {
            gamma(&built.actual, &built.cfg.x_star).map_err(|e| CliError::Infeasible(e.to_string()))
        }
        App::Vsc(p) => Ok(p
            .gamma_report(&built.cfg.x_star)
            .map_err(|e| CliError::Infeasible(e.to_string()))?
            .base),
    }
}

/// Closed-loop equilibrium for the built scenario, seeded from the
/// gamma-scaled reference.
fn closed_loop_equilibrium(built: &BuiltScenario) -> Result<(pidpbc::State, DVector<f64>), CliError> {
    let report = app_gamma(built)?;
    if !report.stable {
        return Err(CliError::Infeasible(format!(
            "no closed-loop equilibrium on the reference ray (P_net = {:.3e} W <= 0)",
            report.p_net
        )));
    }
    let guess = match &built.app {
        App::Boost(_) => report.gamma * &built.cfg.x_star,
        App::Vsc(p) => {
            // scale the converter components, re-solve the line currents
            let z = p.coenergy_of(&built.cfg.x_star);
            let v1 = report.gamma * z[2];
            let i_t = [
                (p.v2_actual - v1) / p.r_t[0],
                (p.v2_actual - v1) / p.r_t[1],
                (p.v2_actual - v1) / p.r_t[2],
            ];
            p.state_from_coenergy(report.gamma * z[0], report.gamma * z[1], v1, i_t)
        }
    };
    find_equilibrium(&built.actual, &built.cfg, &guess, &built.cfg.x_c_star)
        .map_err(|e| CliError::Run(e.to_string()))
}

fn certify(args: CertifyArgs) -> Result<(), CliError> {
    let built = load_scenario(&args.scenario)?;
    let (x_bar, xc_bar) = closed_loop_equilibrium(&built)?;
    let cert = certificate_for(&built, &x_bar, &xc_bar)?;
    let text = certificate_report(&cert);
    print!("{text}");
    if let Some(path) = args.out {
        std::fs::write(path, text)?;
    }
    if cert.satisfied {
        Ok(())
    } else {
        Err(CliError::Run("certificate not satisfied".into()))
    }
}

fn certificate_for(
    built: &BuiltScenario,
    x_bar: &pidpbc::State,
    xc_bar: &DVector<f64>,
) -> Result<StabilityCertificate, CliError> {
    let to_run = |e: pidpbc::error::StabilityError| CliError::Run(e.to_string());
    match built.cfg.variant() {
        Variant::Pid => {
            let (lo, hi) = input_box(&built.app);
            pid_certificate(&built.actual, &built.cfg, x_bar, &lo, &hi).map_err(to_run)
        }
        Variant::Plid => plid_certificate(&built.actual, &built.cfg, x_bar).map_err(to_run),
        Variant::MPid | Variant::MPlid => {
            mplid_certificate_with_xc(&built.actual, &built.cfg, x_bar, xc_bar).map_err(to_run)
        }
    }
}

fn input_box(app: &App) -> (DVector<f64>, DVector<f64>) {
    match app {
        App::Boost(p) => (DVector::from_vec(vec![p.u_min]), DVector::from_vec(vec![p.u_max])),
        App::Vsc(p) => (
            DVector::from_vec(vec![-p.u_bound, -p.u_bound]),
            DVector::from_vec(vec![p.u_bound, p.u_bound]),
        ),
    }
}

fn equilibrium(args: EquilibriumArgs) -> Result<(), CliError> {
    let file = SystemFile::load(&args.system)?;
    let app = App::from_section(&file.system, &args.system.display().to_string())?;
    let actual = app
        .build_actual()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let estimated = app
        .build_estimated()
        .map_err(|e| CliError::Run(e.to_string()))?;

    let infeasible = |e: pidpbc::error::EquilibriumError| CliError::Infeasible(e.to_string());
    let (x_star, u_star, approx_delta, extra): (pidpbc::State, DVector<f64>, Option<f64>, String) =
        match &app {
            App::Boost(p) => {
                let v = args.vref.ok_or_else(|| {
                    CliError::Usage("boost systems need --vref <volts>".into())
                })?;
                let (x_star, u) = p.reference_for_voltage(v).map_err(infeasible)?;
                let (i, v) = p.coenergy_of(&x_star);
                (
                    x_star,
                    DVector::from_vec(vec![u]),
                    None,
                    format!("reference: i_L = {i:.4} A, v_C = {v:.4} V\n"),
                )
            }
            App::Vsc(p) => {
                let pw = args.pref_mw.ok_or_else(|| {
                    CliError::Usage("vsc systems need --pref-mw <MW> (and optionally --qref-mw)".into())
                })?;
                let qw = args.qref_mw.unwrap_or(0.0);
                let i_d = p.current_for_power(pw * 1e6);
                let i_q = p.current_for_power(qw * 1e6);
                let (x_star, u) = p.reference_for_currents(i_d, i_q).map_err(infeasible)?;
                let z = p.coenergy_of(&x_star);
                let rep = p.gamma_report(&x_star).map_err(infeasible)?;
                let margin = p.voltage_margin(&x_star);
                let extra = format!(
                    "reference: i_d = {:.4} A, i_q = {:.4} A, v1 = {:.4} kV, i_T = [{:.3}, {:.3}, {:.3}] A\n\
                     certified remote-voltage margin: {:.3} V\n",
                    z[0], z[1], z[2] * 1e-3, z[3], z[4], z[5], margin
                );
                (x_star, u, Some(rep.delta_x_approx), extra)
            }
        };

    print!("{extra}");
    let u_str: Vec<String> = u_star.iter().map(|v| format!("{v:.6}")).collect();
    println!("equilibrium control u*: [{}]", u_str.join(", "));
    let (lo, hi) = input_box(&app);
    let feasible = u_star
        .iter()
        .zip(lo.iter().zip(hi.iter()))
        .all(|(u, (l, h))| l < u && u < h);
    println!("u* inside the modulation bounds: {feasible}");

    let report = match &app {
        App::Boost(_) => gamma(&actual, &x_star).map_err(infeasible)?,
        App::Vsc(p) => p.gamma_report(&x_star).map_err(infeasible)?.base,
    };
    print!("{}", flow_report(&report, approx_delta));

    // sanity: the ESTIMATED pair closes the estimated dynamics
    let u_check = equilibrium_control(&estimated, &x_star).map_err(infeasible)?;
    debug_assert!((u_check - &u_star).norm() < 1e-9);

    if report.stable {
        Ok(())
    } else {
        Err(CliError::Infeasible(
            "reference is outside the stability region of the actual parameters".into(),
        ))
    }
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    configure_workers(args.workers);
    let built = load_scenario(&args.scenario)?;
    let mut cases: Vec<SweepCase> = Vec::new();
    if let Some(param) = &args.param {
        let param: SweepParam = param.parse().map_err(CliError::Usage)?;
        if args.values.is_empty() {
            return Err(CliError::Usage("--param needs --values v1,v2,...".into()));
        }
        cases.extend(cases_for_values(param, &args.values));
    }
    if args.random_ics > 0 {
        cases.extend(cases_for_random_initials(&built, args.random_ics, args.ic_radius, args.seed));
    }
    if cases.is_empty() {
        return Err(CliError::Usage(
            "nothing to sweep: pass --param/--values and/or --random-ics".into(),
        ));
    }
    let outcomes = run_sweep(&built, &cases, args.window, args.tol);
    let table = format_table(&outcomes);
    print!("{table}");
    if let Some(path) = args.out {
        std::fs::write(path, &table)?;
    }
    if outcomes.iter().any(|o| o.error.is_some()) {
        Err(CliError::Run("at least one sweep case failed".into()))
    } else {
        Ok(())
    }
}
