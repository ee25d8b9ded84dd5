//! The four subcommands and the simulation pipeline they share.
//!
//! Every command builds an `Experiment` from the parsed config, normalizes
//! the initial frame, and (when a regime is configured) evaluates the decay
//! constants before touching the integrator. `run`, `verify`, and each sweep
//! row then integrate once, derive per-sample diagnostics from the retained
//! states, and leave all artifacts on disk even when the run halts early, so
//! the failure is inspectable.

use crate::artifacts::{
    render_diagnostics, render_sweep_csv, render_trajectory, to_json_pretty, write_file,
    BoundsJson, CheckJson, ConservedJson, DecayJson, DeviationJson, DiagnosticsRow, EnvelopesJson,
    LedgerJson, SummaryJson, SweepJson, SweepRowJson, SCHEMA,
};
use crate::config::{self, LightSpeed, SimConfig};
use crate::CliError;
use flock_core::analysis::{
    asymptotic_limits, classical_limit_study, conserved, envelope_check, fit_decay_rate,
    flocking_metrics, regime_constants, AsymptoticLimits, BoundsReport, ConservedSet, DecayFit,
    EntropyAccumulator, EnvelopeReport, TrajectorySample,
};
use flock_core::dynamics::{
    integrate, normalize_frame, Ensemble, IntegrationOutcome, IntegrationReport, Scheme,
};
use flock_core::kernels::{KernelStats, ValidationOptions};
use std::path::Path;

/// Everything one integration produced: retained states, derived per-sample
/// series, drift statistics, and the optional regime verdicts.
struct Pipeline {
    samples: Vec<(f64, Ensemble)>,
    report: IntegrationReport,
    bounds: Option<BoundsReport>,
    envelopes: Option<EnvelopeReport>,
    diag: Vec<DiagnosticsRow>,
    conserved_first: ConservedSet,
    conserved_last: ConservedSet,
    entropy_first: f64,
    entropy_last: f64,
    energy_drift: f64,
    energy_drift_time: f64,
    momentum_drift: f64,
    momentum_drift_time: f64,
    entropy_min_step: f64,
    entropy_min_step_time: f64,
    limits: AsymptoticLimits,
    decay: Option<DecayFit>,
    relativistic: bool,
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Normalize the frame, evaluate regime constants if asked, integrate, and
/// derive every per-sample series. `tamper_velocity_at` corrupts the recorded
/// velocity-spread series nearest that time (a hook for testing the ledger's
/// failure path); it never touches the states themselves.
fn run_pipeline(
    exp: &config::Experiment,
    tamper_velocity_at: Option<f64>,
) -> Result<Pipeline, CliError> {
    let ens = normalize_frame(&exp.ensemble)
        .map_err(|e| CliError::validation("init", format!("frame normalization failed: {e}")))?;

    let bounds = match exp.regime {
        Some(regime) => {
            let stats = KernelStats::from_specs(&exp.phi, &exp.zeta, &ValidationOptions::default())
                .map_err(|e| CliError::validation("kernel", e.to_string()))?;
            Some(
                regime_constants(&ens, &exp.phi, &exp.zeta, &stats, regime, exp.margin)
                    .map_err(|e| CliError::validation("analysis", e.to_string()))?,
            )
        }
        None => None,
    };

    let limits =
        asymptotic_limits(&ens).map_err(|e| CliError::validation("init", e.to_string()))?;

    let mut samples: Vec<(f64, Ensemble)> = Vec::new();
    let report = integrate(&ens, &exp.phi, &exp.zeta, &exp.cfg, |t, state| {
        samples.push((t, state.clone()));
    })
    .map_err(|e| CliError::validation("integrator", e.to_string()))?;

    let relativistic = ens.model.is_relativistic();
    let mut accumulator = EntropyAccumulator::new();
    let mut sets: Vec<ConservedSet> = Vec::with_capacity(samples.len());
    let mut entropies: Vec<f64> = Vec::with_capacity(samples.len());
    let mut traj: Vec<TrajectorySample> = Vec::with_capacity(samples.len());
    for (t, state) in &samples {
        let set = conserved(state, &exp.phi, &exp.zeta).map_err(|e| CliError::Integration {
            time: *t,
            message: format!("diagnostics failed: {e}"),
        })?;
        let entropy = match set.entropy {
            Some(s) => s,
            None => accumulator.push(*t, set.entropy_rate),
        };
        let metrics =
            flocking_metrics(state, limits.t_inf).map_err(|e| CliError::Integration {
                time: *t,
                message: format!("diagnostics failed: {e}"),
            })?;
        traj.push(TrajectorySample {
            t: *t,
            norm_x: metrics.norm_x,
            norm_v: metrics.norm_v,
            norm_temp_dev: metrics.norm_temp_dev,
        });
        sets.push(set);
        entropies.push(entropy);
    }

    if let Some(t0) = tamper_velocity_at {
        if let Some(idx) = nearest_sample(&traj, t0) {
            traj[idx].norm_v *= 10.0;
        }
    }

    let feasible = bounds.as_ref().map(|b| b.feasible).unwrap_or(false);
    let envelopes = match bounds.as_ref() {
        Some(b) if b.feasible => Some(
            envelope_check(&traj, b)
                .map_err(|e| CliError::validation("analysis", e.to_string()))?,
        ),
        _ => None,
    };

    // Per-sample diagnostics rows share the envelope anchors (first sample).
    let v0 = traj.first().map(|s| s.norm_v).unwrap_or(0.0);
    let l0 = traj
        .first()
        .map(|s| {
            let a = bounds.as_ref().map(|b| b.a_value).unwrap_or(f64::NAN);
            s.norm_temp_dev * s.norm_temp_dev + a * s.norm_v * s.norm_v
        })
        .unwrap_or(f64::NAN);
    let mut diag: Vec<DiagnosticsRow> = Vec::with_capacity(samples.len());
    for (k, (t, state)) in samples.iter().enumerate() {
        let metrics = flocking_metrics(state, limits.t_inf).map_err(|e| CliError::Integration {
            time: *t,
            message: format!("diagnostics failed: {e}"),
        })?;
        let slack = match bounds.as_ref() {
            Some(b) if feasible => {
                let s = &traj[k];
                let pos = b.position_bound - s.norm_x;
                let vel = v0 * (-b.velocity_rate * s.t).exp() - s.norm_v;
                let lya = l0 * (-b.lambda * s.t).exp()
                    - (s.norm_temp_dev * s.norm_temp_dev + b.a_value * s.norm_v * s.norm_v);
                pos.min(vel).min(lya)
            }
            _ => f64::NAN,
        };
        diag.push(DiagnosticsRow {
            t: *t,
            momentum: sets[k].momentum,
            energy: sets[k].energy,
            entropy: entropies[k],
            position_spread: metrics.position_spread,
            velocity_spread: metrics.velocity_spread,
            temperature_spread: metrics.temperature_spread,
            norm_v: traj[k].norm_v,
            norm_temp_dev: traj[k].norm_temp_dev,
            envelope_slack: slack,
        });
    }

    let e0 = sets[0].energy;
    let m0 = sets[0].momentum;
    let m0_norm = norm3(&m0);
    let mut energy_drift = 0.0;
    let mut energy_drift_time = samples[0].0;
    let mut momentum_drift = 0.0;
    let mut momentum_drift_time = samples[0].0;
    for (k, set) in sets.iter().enumerate() {
        let e_rel = (set.energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE);
        if e_rel > energy_drift {
            energy_drift = e_rel;
            energy_drift_time = samples[k].0;
        }
        let dm = [
            set.momentum[0] - m0[0],
            set.momentum[1] - m0[1],
            set.momentum[2] - m0[2],
        ];
        let m_rel = norm3(&dm) / (1.0 + m0_norm);
        if m_rel > momentum_drift {
            momentum_drift = m_rel;
            momentum_drift_time = samples[k].0;
        }
    }

    let mut entropy_min_step = 0.0;
    let mut entropy_min_step_time = samples[0].0;
    for k in 1..entropies.len() {
        let step = entropies[k] - entropies[k - 1];
        if k == 1 || step < entropy_min_step {
            entropy_min_step = step;
            entropy_min_step_time = samples[k].0;
        }
    }

    let decay = if traj.len() >= 10 && traj.iter().all(|s| s.norm_v > 0.0) {
        let ts: Vec<f64> = traj.iter().map(|s| s.t).collect();
        let ys: Vec<f64> = traj.iter().map(|s| s.norm_v).collect();
        fit_decay_rate(&ts, &ys, (ts[0], ts[ts.len() - 1])).ok()
    } else {
        None
    };

    let conserved_first = sets.first().cloned().expect("at least the initial sample");
    let conserved_last = sets.last().cloned().expect("at least the initial sample");
    let entropy_first = entropies[0];
    let entropy_last = *entropies.last().expect("at least the initial sample");
    Ok(Pipeline {
        samples,
        report,
        bounds,
        envelopes,
        diag,
        conserved_first,
        conserved_last,
        entropy_first,
        entropy_last,
        energy_drift,
        energy_drift_time,
        momentum_drift,
        momentum_drift_time,
        entropy_min_step,
        entropy_min_step_time,
        limits,
        decay,
        relativistic,
    })
}

fn nearest_sample(traj: &[TrajectorySample], t0: f64) -> Option<usize> {
    traj.iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (a.t - t0)
                .abs()
                .partial_cmp(&(b.t - t0).abs())
                .expect("sample times are finite")
        })
        .map(|(idx, _)| idx)
}

fn scheme_name(scheme: &Scheme) -> &'static str {
    match scheme {
        Scheme::Rk4Fixed { .. } => "rk4",
        Scheme::Rk45Adaptive { .. } => "rk45",
    }
}

fn outcome_name(outcome: &IntegrationOutcome) -> String {
    match outcome {
        IntegrationOutcome::Completed => "completed".into(),
        IntegrationOutcome::Halted { .. } => "halted".into(),
    }
}

fn build_summary(
    exp: &config::Experiment,
    pipe: &Pipeline,
    command: &'static str,
) -> SummaryJson {
    SummaryJson {
        schema_version: SCHEMA,
        command,
        model: exp.model_kind.clone(),
        chi: exp.chi,
        c: exp.c_token.clone(),
        n: exp.n,
        scheme: scheme_name(&exp.cfg.scheme).into(),
        t_end: exp.cfg.t_end,
        t_final: pipe.report.t_final,
        outcome: outcome_name(&pipe.report.outcome),
        steps_accepted: pipe.report.steps_accepted,
        steps_rejected: pipe.report.steps_rejected,
        rhs_evaluations: pipe.report.rhs_evaluations,
        samples: pipe.samples.len(),
        conserved_initial: ConservedJson {
            momentum: pipe.conserved_first.momentum,
            energy: pipe.conserved_first.energy,
            entropy: pipe.entropy_first,
        },
        conserved_final: ConservedJson {
            momentum: pipe.conserved_last.momentum,
            energy: pipe.conserved_last.energy,
            entropy: pipe.entropy_last,
        },
        energy_drift: pipe.energy_drift,
        momentum_drift: pipe.momentum_drift,
        entropy_min_step: pipe.entropy_min_step,
        asymptotic_momentum: pipe.limits.momentum_limit,
        asymptotic_temperature: pipe.limits.t_inf,
        bounds: pipe.bounds.as_ref().map(BoundsJson::from_report),
        envelopes: pipe.envelopes.as_ref().map(EnvelopesJson::from_report),
        velocity_decay: pipe.decay.as_ref().map(DecayJson::from_fit),
    }
}

fn write_run_artifacts(
    exp: &config::Experiment,
    pipe: &Pipeline,
    out: &Path,
    command: &'static str,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io {
        message: format!("create {}: {e}", out.display()),
    })?;
    write_file(&out.join("trajectory.csv"), &render_trajectory(&pipe.samples))?;
    write_file(&out.join("diagnostics.csv"), &render_diagnostics(&pipe.diag))?;
    write_file(
        &out.join("summary.json"),
        &to_json_pretty(&build_summary(exp, pipe, command)),
    )?;
    Ok(())
}

fn finish_outcome(pipe: &Pipeline) -> Result<(), CliError> {
    match &pipe.report.outcome {
        IntegrationOutcome::Completed => Ok(()),
        IntegrationOutcome::Halted { at_time, error } => Err(CliError::Integration {
            time: *at_time,
            message: format!("integration halted: {error}"),
        }),
    }
}

pub fn cmd_run(
    cfg: &SimConfig,
    out: &Path,
    seed: Option<u64>,
    quiet: bool,
) -> Result<(), CliError> {
    let exp = config::build_experiment(cfg, seed)?;
    let pipe = run_pipeline(&exp, None)?;
    write_run_artifacts(&exp, &pipe, out, "run")?;
    if !quiet {
        println!(
            "run: {} samples to t={}; artifacts in {}",
            pipe.samples.len(),
            pipe.report.t_final,
            out.display()
        );
    }
    finish_outcome(&pipe)
}

pub fn cmd_bounds(cfg: &SimConfig, seed: Option<u64>) -> Result<(), CliError> {
    let exp = config::build_experiment(cfg, seed)?;
    let regime = exp.regime.ok_or_else(|| {
        CliError::validation("analysis.regime", "bounds requires a regime (1, 2, or 3)")
    })?;
    let ens = normalize_frame(&exp.ensemble)
        .map_err(|e| CliError::validation("init", format!("frame normalization failed: {e}")))?;
    let stats = KernelStats::from_specs(&exp.phi, &exp.zeta, &ValidationOptions::default())
        .map_err(|e| CliError::validation("kernel", e.to_string()))?;
    let report = regime_constants(&ens, &exp.phi, &exp.zeta, &stats, regime, exp.margin)
        .map_err(|e| CliError::validation("analysis", e.to_string()))?;
    print!("{}", to_json_pretty(&BoundsJson::from_report(&report)));
    Ok(())
}

/// Grade every checkable invariant of one completed pipeline into ledger rows.
fn grade_checks(pipe: &Pipeline) -> Vec<CheckJson> {
    let mut checks = Vec::new();

    let energy_tol = if pipe.relativistic { 1e-7 } else { 1e-8 };
    checks.push(CheckJson {
        name: "conservation.energy",
        status: if pipe.energy_drift <= energy_tol {
            "pass"
        } else {
            "fail"
        },
        worst_slack: Some(energy_tol - pipe.energy_drift),
        worst_time: Some(pipe.energy_drift_time),
        detail: format!(
            "max relative energy drift {:e} against tolerance {:e}",
            pipe.energy_drift, energy_tol
        ),
    });

    checks.push(CheckJson {
        name: "conservation.momentum",
        status: if pipe.momentum_drift <= energy_tol {
            "pass"
        } else {
            "fail"
        },
        worst_slack: Some(energy_tol - pipe.momentum_drift),
        worst_time: Some(pipe.momentum_drift_time),
        detail: format!(
            "max momentum drift {:e} against tolerance {:e}",
            pipe.momentum_drift, energy_tol
        ),
    });

    let entropy_tol = -1e-10;
    checks.push(CheckJson {
        name: "entropy.monotone",
        status: if pipe.entropy_min_step >= entropy_tol {
            "pass"
        } else {
            "fail"
        },
        worst_slack: Some(pipe.entropy_min_step - entropy_tol),
        worst_time: Some(pipe.entropy_min_step_time),
        detail: format!(
            "smallest entropy step {:e} against floor {:e}",
            pipe.entropy_min_step, entropy_tol
        ),
    });

    checks.push(corridor_check(pipe));

    match (&pipe.bounds, &pipe.envelopes) {
        (Some(bounds), Some(env)) if bounds.feasible => {
            let conv = |name: &'static str, c: &flock_core::analysis::EnvelopeCheck| CheckJson {
                name,
                status: if c.pass { "pass" } else { "fail" },
                worst_slack: Some(c.worst_slack),
                worst_time: Some(c.worst_time),
                detail: format!("worst slack {:e} at t={}", c.worst_slack, c.worst_time),
            };
            checks.push(conv("envelope.position", &env.position));
            checks.push(conv("envelope.velocity", &env.velocity));
            checks.push(conv("envelope.lyapunov", &env.lyapunov));
        }
        _ => {
            for name in ["envelope.position", "envelope.velocity", "envelope.lyapunov"] {
                checks.push(CheckJson {
                    name,
                    status: "not-applicable",
                    worst_slack: None,
                    worst_time: None,
                    detail: "regime constants are infeasible for this state; no envelope is \
                             guaranteed"
                        .into(),
                });
            }
        }
    }

    checks.push(decay_check(pipe));
    checks
}

fn corridor_check(pipe: &Pipeline) -> CheckJson {
    let bounds = pipe.bounds.as_ref().expect("verify requires a regime");
    let (t_lower, t_upper) = (bounds.t_lower, bounds.t_upper);
    // Relativistic temperatures obey the corridor up to a constant that tends
    // to one with the speed of light; grade against a fixed 1% allowance and
    // report the empirical constant.
    let k_allow = if pipe.relativistic { 1.01 } else { 1.0 };
    let lo = t_lower / k_allow;
    let hi = t_upper * k_allow;
    let mut worst_slack = f64::INFINITY;
    let mut worst_time = pipe.samples[0].0;
    let mut k_empirical: f64 = 1.0;
    for (t, state) in &pipe.samples {
        for &temp in &state.temps {
            let slack = (temp - lo).min(hi - temp);
            if slack < worst_slack {
                worst_slack = slack;
                worst_time = *t;
            }
            k_empirical = k_empirical.max(temp / t_upper).max(t_lower / temp);
        }
    }
    let tol = -1e-10 * t_upper;
    CheckJson {
        name: "temperature.corridor",
        status: if worst_slack >= tol { "pass" } else { "fail" },
        worst_slack: Some(worst_slack),
        worst_time: Some(worst_time),
        detail: format!(
            "corridor [{lo}, {hi}] with allowance {k_allow}; empirical constant {k_empirical}"
        ),
    }
}

fn decay_check(pipe: &Pipeline) -> CheckJson {
    let feasible = pipe.bounds.as_ref().map(|b| b.feasible).unwrap_or(false);
    if !feasible {
        return CheckJson {
            name: "decay.velocity_rate",
            status: "not-applicable",
            worst_slack: None,
            worst_time: None,
            detail: "regime constants are infeasible for this state; no rate is guaranteed"
                .into(),
        };
    }
    let guaranteed = pipe.bounds.as_ref().expect("feasible bounds").velocity_rate;
    match &pipe.decay {
        Some(fit) => {
            let slack = fit.rate - (guaranteed - 0.05);
            CheckJson {
                name: "decay.velocity_rate",
                status: if slack >= 0.0 { "pass" } else { "fail" },
                worst_slack: Some(slack),
                worst_time: None,
                detail: format!(
                    "fitted rate {} against guaranteed {} (0.05 fitting allowance)",
                    fit.rate, guaranteed
                ),
            }
        }
        None => CheckJson {
            name: "decay.velocity_rate",
            status: "not-applicable",
            worst_slack: None,
            worst_time: None,
            detail: "velocity spread vanishes or too few samples; nothing to fit".into(),
        },
    }
}

pub fn cmd_verify(
    cfg: &SimConfig,
    out: &Path,
    seed: Option<u64>,
    quiet: bool,
    tamper_velocity_at: Option<f64>,
) -> Result<(), CliError> {
    let exp = config::build_experiment(cfg, seed)?;
    if exp.regime.is_none() {
        return Err(CliError::validation(
            "analysis.regime",
            "verify requires a regime (1, 2, or 3)",
        ));
    }
    let pipe = run_pipeline(&exp, tamper_velocity_at)?;
    write_run_artifacts(&exp, &pipe, out, "verify")?;
    finish_outcome(&pipe)?;

    let checks = grade_checks(&pipe);
    let failed = checks.iter().filter(|c| !c.passed()).count();
    let ledger = LedgerJson {
        schema_version: SCHEMA,
        all_pass: failed == 0,
        checks,
    };
    write_file(&out.join("ledger.json"), &to_json_pretty(&ledger))?;
    if !quiet {
        for check in &ledger.checks {
            println!("verify: {:<24} {}", check.name, check.status);
        }
        println!(
            "verify: {}; ledger in {}",
            if failed == 0 {
                "all checks passed".into()
            } else {
                format!("{failed} check(s) failed")
            },
            out.display()
        );
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::ChecksFailed { failed })
    }
}

const SWEEP_PARAMETERS: [&str; 5] = ["c", "chi", "N", "epsilon", "dt"];

fn parse_sweep(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (name, list) = spec.split_once('=').ok_or_else(|| {
        CliError::validation("sweep", "expected name=v1,v2,... with name in {c, chi, N, epsilon, dt}")
    })?;
    let name = name.trim();
    if !SWEEP_PARAMETERS.contains(&name) {
        return Err(CliError::validation(
            "sweep",
            format!("unknown sweep parameter {name:?}; expected one of {SWEEP_PARAMETERS:?}"),
        ));
    }
    let tokens: Vec<String> = list
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect();
    if tokens.is_empty() {
        return Err(CliError::validation("sweep", "empty value list"));
    }
    Ok((name.to_string(), tokens))
}

/// Produce the config for one sweep row. Syntactic problems (unparseable
/// token, structurally impossible patch) are validation errors; semantic ones
/// surface later as failed rows.
fn patch_config(base: &SimConfig, param: &str, token: &str) -> Result<SimConfig, CliError> {
    let mut cfg = base.clone();
    match param {
        "c" => {
            if token.eq_ignore_ascii_case("inf") {
                cfg.model.kind = "classical".into();
                cfg.model.c = LightSpeed::Token("inf".into());
            } else {
                if base.model.kind == "classical" {
                    return Err(CliError::validation(
                        "sweep",
                        "a c sweep needs a relativistic model.kind as its base",
                    ));
                }
                let value: f64 = token.parse().map_err(|_| {
                    CliError::validation("sweep", format!("bad c value {token:?}"))
                })?;
                cfg.model.c = LightSpeed::Float(value);
            }
        }
        "chi" => {
            let value: u32 = token.parse().map_err(|_| {
                CliError::validation("sweep", format!("bad chi value {token:?}"))
            })?;
            cfg.model.chi = value;
        }
        "N" => {
            if cfg.init.random.is_none() {
                return Err(CliError::validation(
                    "sweep",
                    "an N sweep needs a random initial condition",
                ));
            }
            let value: usize = token.parse().map_err(|_| {
                CliError::validation("sweep", format!("bad N value {token:?}"))
            })?;
            cfg.particles.n = value;
        }
        "dt" => {
            if cfg.integrator.scheme != "rk4" {
                return Err(CliError::validation(
                    "sweep",
                    "a dt sweep needs the fixed-step rk4 scheme",
                ));
            }
            let value: f64 = token.parse().map_err(|_| {
                CliError::validation("sweep", format!("bad dt value {token:?}"))
            })?;
            cfg.integrator.dt = Some(value);
        }
        "epsilon" => {
            let target: f64 = token.parse().map_err(|_| {
                CliError::validation("sweep", format!("bad epsilon value {token:?}"))
            })?;
            if target < 0.0 || !target.is_finite() {
                return Err(CliError::validation(
                    "sweep",
                    "epsilon must be finite and nonnegative",
                ));
            }
            let base_value = cfg.kernel.phi.base.ok_or_else(|| {
                CliError::validation(
                    "sweep",
                    "an epsilon sweep needs a perturbed phi kernel with a base",
                )
            })?;
            let matrix = cfg.kernel.phi.matrix.as_mut().ok_or_else(|| {
                CliError::validation(
                    "sweep",
                    "an epsilon sweep needs a perturbed phi kernel with a matrix",
                )
            })?;
            // Epsilon is the weight spread (max - min). Scale deviations
            // around the base so the spread lands on the target while the
            // base point stays fixed.
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for x in matrix.iter().flatten() {
                lo = lo.min(*x);
                hi = hi.max(*x);
            }
            let current = hi - lo;
            if current == 0.0 {
                if target != 0.0 {
                    return Err(CliError::validation(
                        "sweep",
                        "the perturbation matrix has zero spread; epsilon cannot be scaled up",
                    ));
                }
            } else {
                let scale = target / current;
                for row in matrix.iter_mut() {
                    for x in row.iter_mut() {
                        *x = base_value + (*x - base_value) * scale;
                    }
                }
            }
        }
        _ => unreachable!("parameter validated in parse_sweep"),
    }
    Ok(cfg)
}

fn run_row(param: &str, token: &str, cfg: &SimConfig, seed: Option<u64>) -> SweepRowJson {
    let outcome = config::build_experiment(cfg, seed)
        .and_then(|exp| run_pipeline(&exp, None).map(|pipe| (exp, pipe)));
    match outcome {
        Ok((_exp, pipe)) => {
            let (completed, note) = match &pipe.report.outcome {
                IntegrationOutcome::Completed => (true, String::new()),
                IntegrationOutcome::Halted { at_time, error } => {
                    (false, format!("halted at t={at_time}: {error}"))
                }
            };
            SweepRowJson {
                parameter: param.into(),
                value: token.into(),
                completed,
                t_final: pipe.report.t_final,
                energy_drift: pipe.energy_drift,
                momentum_drift: pipe.momentum_drift,
                entropy_min_step: pipe.entropy_min_step,
                note,
            }
        }
        Err(e) => SweepRowJson {
            parameter: param.into(),
            value: token.into(),
            completed: false,
            t_final: f64::NAN,
            energy_drift: f64::NAN,
            momentum_drift: f64::NAN,
            entropy_min_step: f64::NAN,
            note: e.message_text(),
        },
    }
}

fn worker_count(rows: usize) -> usize {
    let default = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1);
    std::env::var("FLOCKD_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .unwrap_or(default)
        .min(rows)
        .max(1)
}

/// Extra study attached to c sweeps: rerun the family against the classical
/// baseline built from the same seed and fit how the trajectory deviation
/// scales with c.
fn classical_limit_extras(
    base: &SimConfig,
    tokens: &[String],
    seed: Option<u64>,
) -> Result<(Option<f64>, Vec<DeviationJson>), CliError> {
    let mut classical_cfg = base.clone();
    classical_cfg.model.kind = "classical".into();
    classical_cfg.model.c = LightSpeed::Token("inf".into());
    let exp = config::build_experiment(&classical_cfg, seed)?;
    let ens = normalize_frame(&exp.ensemble)
        .map_err(|e| CliError::validation("init", format!("frame normalization failed: {e}")))?;
    let mut c_list = Vec::with_capacity(tokens.len());
    for token in tokens {
        if token.eq_ignore_ascii_case("inf") {
            c_list.push(f64::INFINITY);
        } else {
            c_list.push(token.parse().map_err(|_| {
                CliError::validation("sweep", format!("bad c value {token:?}"))
            })?);
        }
    }
    let study = classical_limit_study(&ens, &c_list, &exp.phi, &exp.zeta, &exp.cfg)
        .map_err(|e| CliError::validation("sweep", e.to_string()))?;
    let deviations = study
        .rows
        .iter()
        .zip(tokens)
        .map(|(row, token)| DeviationJson {
            c: token.clone(),
            max_deviation: row.max_deviation,
            completed: row.completed,
        })
        .collect();
    Ok((study.slope, deviations))
}

pub fn cmd_sweep(
    cfg: &SimConfig,
    sweep_spec: &str,
    out: &Path,
    seed: Option<u64>,
    quiet: bool,
) -> Result<(), CliError> {
    let (param, tokens) = parse_sweep(sweep_spec)?;
    let jobs: Vec<(String, SimConfig)> = tokens
        .iter()
        .map(|tok| patch_config(cfg, &param, tok).map(|c| (tok.clone(), c)))
        .collect::<Result<_, _>>()?;

    let workers = worker_count(jobs.len());
    let rows: Vec<SweepRowJson> = if workers <= 1 {
        jobs.iter()
            .map(|(tok, cfg)| run_row(&param, tok, cfg, seed))
            .collect()
    } else {
        let mut slots: Vec<Option<SweepRowJson>> = (0..jobs.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let jobs = &jobs;
            let param = &param;
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                handles.push(scope.spawn(move || {
                    let mut done = Vec::new();
                    let mut i = w;
                    while i < jobs.len() {
                        let (tok, cfg) = &jobs[i];
                        done.push((i, run_row(param, tok, cfg, seed)));
                        i += workers;
                    }
                    done
                }));
            }
            for handle in handles {
                for (i, row) in handle.join().expect("sweep worker panicked") {
                    slots[i] = Some(row);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every row index assigned"))
            .collect()
    };

    let (classical_limit_slope, deviations) = if param == "c" {
        let (slope, devs) = classical_limit_extras(cfg, &tokens, seed)?;
        (slope, Some(devs))
    } else {
        (None, None)
    };

    std::fs::create_dir_all(out).map_err(|e| CliError::Io {
        message: format!("create {}: {e}", out.display()),
    })?;
    write_file(&out.join("sweep.csv"), &render_sweep_csv(&rows, &param))?;
    let completed = rows.iter().filter(|r| r.completed).count();
    let summary = SweepJson {
        schema_version: SCHEMA,
        parameter: param.clone(),
        rows,
        classical_limit_slope,
        deviations,
    };
    write_file(&out.join("summary.json"), &to_json_pretty(&summary))?;
    if !quiet {
        println!(
            "sweep: {completed}/{} rows completed; artifacts in {}",
            summary.rows.len(),
            out.display()
        );
    }
    if completed > 0 {
        Ok(())
    } else {
        Err(CliError::NoRowsSucceeded)
    }
}
