//! Artifact writers. Every file starts with a schema marker, floats are
//! written in shortest round-trip form, and field order is fixed, so repeated
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use flock_core::analysis::{BoundsReport, DecayFit, EnvelopeReport};
use flock_core::dynamics::Ensemble;

use crate::CliError;

pub const SCHEMA: &str = "flockd/1";

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        message: format!("cannot write {}: {e}", path.display()),
    })
}

/// trajectory.csv: t, then per-particle position, velocity, temperature.
pub fn render_trajectory(samples: &[(f64, Ensemble)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# schema {SCHEMA}");
    let n = samples.first().map_or(0, |(_, e)| e.n());
    let mut header = String::from("t");
    for a in 0..n {
        for k in 0..3 {
            let _ = write!(header, ",x{a}_{k}");
        }
        for k in 0..3 {
            let _ = write!(header, ",v{a}_{k}");
        }
        let _ = write!(header, ",T{a}");
    }
    let _ = writeln!(out, "{header}");
    for (t, state) in samples {
        let _ = write!(out, "{t}");
        for a in 0..state.n() {
            for k in 0..3 {
                let _ = write!(out, ",{}", state.x[a][k]);
            }
            for k in 0..3 {
                let _ = write!(out, ",{}", state.v[a][k]);
            }
            let _ = write!(out, ",{}", state.temps[a]);
        }
        let _ = writeln!(out);
    }
    out
}

/// One diagnostics row per sample; `envelope_slack` is NaN when no regime is
/// configured.
pub struct DiagnosticsRow {
    pub t: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub entropy: f64,
    pub position_spread: f64,
    pub velocity_spread: f64,
    pub temperature_spread: f64,
    pub norm_v: f64,
    pub norm_temp_dev: f64,
    pub envelope_slack: f64,
}

pub fn render_diagnostics(rows: &[DiagnosticsRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# schema {SCHEMA}");
    let _ = writeln!(
        out,
        "t,M_0,M_1,M_2,E,S,D_x,D_v,D_T,norm_v,norm_temp_dev,envelope_slack"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.momentum[0],
            r.momentum[1],
            r.momentum[2],
            r.energy,
            r.entropy,
            r.position_spread,
            r.velocity_spread,
            r.temperature_spread,
            r.norm_v,
            r.norm_temp_dev,
            r.envelope_slack
        );
    }
    out
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable artifact");
    text.push('\n');
    text
}

#[derive(Serialize)]
pub struct ConservedJson {
    pub momentum: [f64; 3],
    pub energy: f64,
    /// Classical absolute entropy, or the accumulated relativistic entropy.
    pub entropy: f64,
}

#[derive(Serialize)]
pub struct BoundsJson {
    pub schema_version: &'static str,
    pub regime: u8,
    pub relativistic: bool,
    pub feasible: bool,
    pub t_lower: f64,
    pub t_upper: f64,
    pub momentum_limit: [f64; 3],
    pub t_inf: f64,
    pub a_threshold: f64,
    pub a_value: f64,
    pub lambda: f64,
    pub lambda_positive: bool,
    pub velocity_rate: f64,
    pub position_bound: f64,
    pub u_star: Option<f64>,
    pub epsilon_ok: Option<bool>,
    pub light_speed_ok: Option<bool>,
    pub well_prepared: Option<bool>,
    pub leading_order_convention: bool,
}

impl BoundsJson {
    pub fn from_report(report: &BoundsReport) -> Self {
        BoundsJson {
            schema_version: SCHEMA,
            regime: report.regime,
            relativistic: report.relativistic,
            feasible: report.feasible,
            t_lower: report.t_lower,
            t_upper: report.t_upper,
            momentum_limit: report.momentum_limit,
            t_inf: report.t_inf,
            a_threshold: report.a_threshold,
            a_value: report.a_value,
            lambda: report.lambda,
            lambda_positive: report.lambda_positive,
            velocity_rate: report.velocity_rate,
            position_bound: report.position_bound,
            u_star: report.u_star,
            epsilon_ok: report.conditions.epsilon_ok,
            light_speed_ok: report.conditions.light_speed_ok,
            well_prepared: report.conditions.well_prepared,
            leading_order_convention: report.leading_order_convention,
        }
    }
}

#[derive(Serialize)]
pub struct EnvelopeJson {
    pub pass: bool,
    pub worst_slack: f64,
    pub worst_time: f64,
}

#[derive(Serialize)]
pub struct EnvelopesJson {
    pub all_pass: bool,
    pub position: EnvelopeJson,
    pub velocity: EnvelopeJson,
    pub lyapunov: EnvelopeJson,
}

impl EnvelopesJson {
    pub fn from_report(report: &EnvelopeReport) -> Self {
        let conv = |c: &flock_core::analysis::EnvelopeCheck| EnvelopeJson {
            pass: c.pass,
            worst_slack: c.worst_slack,
            worst_time: c.worst_time,
        };
        EnvelopesJson {
            all_pass: report.all_pass,
            position: conv(&report.position),
            velocity: conv(&report.velocity),
            lyapunov: conv(&report.lyapunov),
        }
    }
}

#[derive(Serialize)]
pub struct DecayJson {
    pub rate: f64,
    pub window: [f64; 2],
    pub residual: f64,
    pub samples_used: usize,
}

impl DecayJson {
    pub fn from_fit(fit: &DecayFit) -> Self {
        DecayJson {
            rate: fit.rate,
            window: [fit.window.0, fit.window.1],
            residual: fit.residual,
            samples_used: fit.samples_used,
        }
    }
}

#[derive(Serialize)]
pub struct SummaryJson {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub model: String,
    pub chi: u32,
    pub c: String,
    pub n: usize,
    pub scheme: String,
    pub t_end: f64,
    pub t_final: f64,
    pub outcome: String,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evaluations: u64,
    pub samples: usize,
    pub conserved_initial: ConservedJson,
    pub conserved_final: ConservedJson,
    pub energy_drift: f64,
    pub momentum_drift: f64,
    pub entropy_min_step: f64,
    pub asymptotic_momentum: [f64; 3],
    pub asymptotic_temperature: f64,
    pub bounds: Option<BoundsJson>,
    pub envelopes: Option<EnvelopesJson>,
    pub velocity_decay: Option<DecayJson>,
}

#[derive(Serialize)]
pub struct CheckJson {
    pub name: &'static str,
    /// pass | fail | not-applicable
    pub status: &'static str,
    pub worst_slack: Option<f64>,
    pub worst_time: Option<f64>,
    pub detail: String,
}

impl CheckJson {
    pub fn passed(&self) -> bool {
        self.status != "fail"
    }
}

#[derive(Serialize)]
pub struct LedgerJson {
    pub schema_version: &'static str,
    pub all_pass: bool,
    pub checks: Vec<CheckJson>,
}

#[derive(Serialize)]
pub struct SweepRowJson {
    pub parameter: String,
    pub value: String,
    pub completed: bool,
    pub t_final: f64,
    pub energy_drift: f64,
    pub momentum_drift: f64,
    pub entropy_min_step: f64,
    pub note: String,
}

#[derive(Serialize)]
pub struct SweepJson {
    pub schema_version: &'static str,
    pub parameter: String,
    pub rows: Vec<SweepRowJson>,
    /// Log-log slope of trajectory deviation against c, for c sweeps.
    pub classical_limit_slope: Option<f64>,
    pub deviations: Option<Vec<DeviationJson>>,
}

#[derive(Serialize)]
pub struct DeviationJson {
    pub c: String,
    pub max_deviation: f64,
    pub completed: bool,
}

pub fn render_sweep_csv(rows: &[SweepRowJson], parameter: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# schema {SCHEMA}");
    let _ = writeln!(
        out,
        "parameter,value,completed,t_final,energy_drift,momentum_drift,entropy_min_step,note"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            parameter,
            r.value,
            r.completed,
            r.t_final,
            r.energy_drift,
            r.momentum_drift,
            r.entropy_min_step,
            r.note
        );
    }
    out
}
