//! Plain-text reports for certificates and equilibrium analyses.

use crate::equilibria::PowerFlowReport;
use crate::stability::StabilityCertificate;

/// Renders a certificate as a versioned block-per-condition text report.
pub fn certificate_report(cert: &StabilityCertificate) -> String {
    let mut out = String::new();
    out.push_str("certificate_report_version: 1\n");
    out.push_str(&format!("controller: {}\n", cert.variant));
    out.push_str(&format!(
        "status: {}\n",
        if cert.satisfied { "SATISFIED" } else { "NOT SATISFIED" }
    ));
    if cert.epsilon > 0.0 {
        out.push_str(&format!("cross-term weight epsilon: {:.6e}\n", cert.epsilon));
    }
    if cert.alpha > 0.0 {
        out.push_str(&format!("certified exponential rate alpha: {:.6e} 1/s\n", cert.alpha));
    } else {
        out.push_str("certified exponential rate alpha: none\n");
    }
    for m in &cert.margins {
        out.push_str("\ncondition:\n");
        out.push_str(&format!("  requires: {}\n", m.name));
        out.push_str(&format!("  margin (smallest eigenvalue): {:.6e}\n", m.margin));
        out.push_str(&format!("  holds: {}\n", m.margin > 0.0));
    }
    out
}

/// Renders a power-flow robustness report.
pub fn flow_report(report: &PowerFlowReport, approx_delta: Option<f64>) -> String {
    let mut out = String::new();
    out.push_str("equilibrium_report_version: 1\n");
    out.push_str(&format!("dissipated power P_loss: {:.6e} W\n", report.p_loss));
    out.push_str(&format!("net supplied power P_net: {:.6e} W\n", report.p_net));
    out.push_str(&format!("gamma (P_net / P_loss): {:.9}\n", report.gamma));
    out.push_str(&format!("per-unit steady-state deviation: {:.6e}\n", report.delta_x));
    if let Some(d) = approx_delta {
        out.push_str(&format!("per-unit deviation, lossless approximation: {:.6e}\n", d));
    }
    out.push_str(&format!(
        "closed-loop equilibrium on the reference ray: {}\n",
        if report.stable { "exists (P_net > 0)" } else { "NONE (P_net <= 0): unstable reference" }
    ));
    out
}
