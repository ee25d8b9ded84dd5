//! Config schema, validation, and construction of the simulation objects.
//!
//! The file is strict TOML: unknown keys are rejected before any computation.
//! Model selection has one source of truth: `model.c = "inf"` belongs to the
//! classical model and a finite c to the relativistic ones; a mismatch with
//! `model.kind` is a validation error rather than a silent override.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

use flock_core::dynamics::{Ensemble, IntegratorConfig, Model, Scheme};
use flock_core::gas_model::Atomicity;
use flock_core::kernels::{KernelRole, KernelSpec};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelSection,
    pub particles: ParticlesSection,
    pub init: InitSection,
    pub kernel: KernelSection,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// classical | rtcs | rtcs-simplified | mechanical
    pub kind: String,
    pub chi: u32,
    #[serde(default = "default_light_speed")]
    pub c: LightSpeed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LightSpeed {
    Float(f64),
    Int(i64),
    Token(String),
}

fn default_light_speed() -> LightSpeed {
    LightSpeed::Token("inf".into())
}

impl LightSpeed {
    pub fn resolve(&self) -> Result<f64, CliError> {
        match self {
            LightSpeed::Float(x) if *x > 0.0 && x.is_finite() => Ok(*x),
            LightSpeed::Int(i) if *i > 0 => Ok(*i as f64),
            LightSpeed::Token(s) if s.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
            _ => Err(CliError::validation(
                "model.c",
                format!("light speed must be a positive number or \"inf\", got {self:?}"),
            )),
        }
    }

    pub fn token(&self) -> String {
        match self {
            LightSpeed::Float(x) => format!("{x}"),
            LightSpeed::Int(i) => format!("{i}"),
            LightSpeed::Token(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    pub n: usize,
    #[serde(default = "default_dim")]
    pub dim: u32,
}

fn default_dim() -> u32 {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub explicit: Option<ExplicitInit>,
    pub random: Option<RandomInit>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitInit {
    pub x: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInit {
    pub seed: u64,
    /// Positions uniform in [-box/2, box/2] per axis.
    pub position_box: f64,
    /// Velocities Gaussian with this standard deviation per axis.
    pub velocity_scale: f64,
    /// Temperatures uniform in [lo, hi].
    pub temp_range: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub phi: KernelConfig,
    pub zeta: KernelConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// constant | inverse-power | triangular | perturbed | tabulated
    pub kind: String,
    pub value: Option<f64>,
    pub phi0: Option<f64>,
    pub beta: Option<f64>,
    pub radius: Option<f64>,
    pub base: Option<f64>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    /// rk4 | rk45
    pub scheme: String,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub sample_stride: Option<usize>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub t_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub regime: Option<u8>,
    pub margin: Option<f64>,
}

/// Everything a command needs, built and validated from one config.
pub struct Experiment {
    pub ensemble: Ensemble,
    pub phi: KernelSpec,
    pub zeta: KernelSpec,
    pub cfg: IntegratorConfig,
    pub regime: Option<u8>,
    pub margin: f64,
    pub model_kind: String,
    pub chi: u32,
    pub c_token: String,
    pub n: usize,
}

pub fn parse_config(text: &str) -> Result<SimConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::validation_message(format!("config: {e}")))
}

pub fn build_experiment(config: &SimConfig, seed_override: Option<u64>) -> Result<Experiment, CliError> {
    let c = config.model.c.resolve()?;
    let model = match config.model.kind.as_str() {
        "classical" => Model::ClassicalTCS,
        "rtcs" => Model::RTCSSynge,
        "rtcs-simplified" => Model::RTCSSimplified,
        "mechanical" => Model::RelativisticCSMechanical,
        other => {
            return Err(CliError::validation(
                "model.kind",
                format!("unknown model kind {other:?}"),
            ))
        }
    };
    if model == Model::ClassicalTCS && c.is_finite() {
        return Err(CliError::validation(
            "model.c",
            "the classical model requires c = \"inf\"; a finite c conflicts with model.kind",
        ));
    }
    if model != Model::ClassicalTCS && !c.is_finite() {
        return Err(CliError::validation(
            "model.c",
            "relativistic models require a finite c; \"inf\" selects the classical model",
        ));
    }
    let chi = Atomicity::from_chi(config.model.chi)
        .map_err(|e| CliError::validation("model.chi", e.to_string()))?;
    let dim = config.particles.dim;
    if dim != 2 && dim != 3 {
        return Err(CliError::validation(
            "particles.dim",
            format!("dim must be 2 or 3, got {dim}"),
        ));
    }
    let n = config.particles.n;

    let (x, v, temps) = match (&config.init.explicit, &config.init.random) {
        (Some(_), Some(_)) => {
            return Err(CliError::validation(
                "init",
                "give exactly one of init.explicit and init.random, not both",
            ))
        }
        (None, None) => {
            return Err(CliError::validation(
                "init",
                "give exactly one of init.explicit and init.random",
            ))
        }
        (Some(explicit), None) => {
            if explicit.x.len() != n || explicit.v.len() != n || explicit.t.len() != n {
                return Err(CliError::validation(
                    "init.explicit",
                    format!(
                        "expected {n} entries per array, got {} positions, {} velocities, {} temperatures",
                        explicit.x.len(),
                        explicit.v.len(),
                        explicit.t.len()
                    ),
                ));
            }
            if dim == 2 {
                for (a, (xa, va)) in explicit.x.iter().zip(&explicit.v).enumerate() {
                    if xa[2] != 0.0 || va[2] != 0.0 {
                        return Err(CliError::validation(
                            "init.explicit",
                            format!("dim = 2 requires zero third components, particle {a} has some"),
                        ));
                    }
                }
            }
            (explicit.x.clone(), explicit.v.clone(), explicit.t.clone())
        }
        (None, Some(random)) => {
            if !(random.position_box > 0.0) || !(random.velocity_scale >= 0.0) {
                return Err(CliError::validation(
                    "init.random",
                    "position_box must be positive and velocity_scale nonnegative",
                ));
            }
            if !(random.temp_range[0] > 0.0) || random.temp_range[1] < random.temp_range[0] {
                return Err(CliError::validation(
                    "init.random.temp_range",
                    format!(
                        "need 0 < lo <= hi, got [{}, {}]",
                        random.temp_range[0], random.temp_range[1]
                    ),
                ));
            }
            let seed = seed_override.unwrap_or(random.seed);
            draw_initial_state(random, seed, n, dim)
        }
    };

    let ensemble = Ensemble::new(x, v, temps, chi, c, model)
        .map_err(|e| CliError::validation("init", e.to_string()))?;

    let phi = build_kernel(&config.kernel.phi, KernelRole::Phi, n, "kernel.phi")?;
    let zeta = build_kernel(&config.kernel.zeta, KernelRole::Zeta, n, "kernel.zeta")?;
    let cfg = build_integrator(&config.integrator)?;

    if let Some(regime) = config.analysis.regime {
        if !(1..=3).contains(&regime) {
            return Err(CliError::validation(
                "analysis.regime",
                format!("regime must be 1, 2, or 3, got {regime}"),
            ));
        }
    }
    let margin = config.analysis.margin.unwrap_or(0.1);
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(CliError::validation(
            "analysis.margin",
            format!("margin must be positive and finite, got {margin}"),
        ));
    }

    Ok(Experiment {
        ensemble,
        phi,
        zeta,
        cfg,
        regime: config.analysis.regime,
        margin,
        model_kind: config.model.kind.clone(),
        chi: config.model.chi,
        c_token: config.model.c.token(),
        n,
    })
}

/// All draws come from one counter-based stream in a fixed order: positions,
/// then velocities, then temperatures. Gaussian components use the polar
/// form of two uniform draws each, so the stream layout never depends on
/// earlier values.
fn draw_initial_state(
    spec: &RandomInit,
    seed: u64,
    n: usize,
    dim: u32,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = vec![[0.0; 3]; n];
    for xa in &mut x {
        for k in 0..dim as usize {
            xa[k] = spec.position_box * (rng.random::<f64>() - 0.5);
        }
    }
    let mut v = vec![[0.0; 3]; n];
    for va in &mut v {
        for k in 0..dim as usize {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            va[k] = spec.velocity_scale
                * (-2.0 * u1.ln()).sqrt()
                * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
    let mut temps = vec![0.0; n];
    for t in &mut temps {
        let u: f64 = rng.random();
        *t = spec.temp_range[0] + (spec.temp_range[1] - spec.temp_range[0]) * u;
    }
    (x, v, temps)
}

fn require(opt: Option<f64>, field: &str, kind: &str) -> Result<f64, CliError> {
    opt.ok_or_else(|| CliError::validation(field, format!("required for kind {kind:?}")))
}

fn build_kernel(
    config: &KernelConfig,
    role: KernelRole,
    n: usize,
    at: &str,
) -> Result<KernelSpec, CliError> {
    let spec = match config.kind.as_str() {
        "constant" => KernelSpec::constant(
            require(config.value, &format!("{at}.value"), "constant")?,
            role,
        ),
        "inverse-power" => KernelSpec::inverse_power(
            require(config.phi0, &format!("{at}.phi0"), "inverse-power")?,
            require(config.beta, &format!("{at}.beta"), "inverse-power")?,
            role,
        ),
        "triangular" => KernelSpec::triangular(
            require(config.phi0, &format!("{at}.phi0"), "triangular")?,
            require(config.radius, &format!("{at}.radius"), "triangular")?,
            role,
        ),
        "perturbed" => {
            let base = require(config.base, &format!("{at}.base"), "perturbed")?;
            let matrix = config.matrix.clone().ok_or_else(|| {
                CliError::validation(format!("{at}.matrix"), "required for kind \"perturbed\"")
            })?;
            if matrix.len() != n {
                return Err(CliError::validation(
                    format!("{at}.matrix"),
                    format!("need an {n} x {n} matrix, got {} rows", matrix.len()),
                ));
            }
            KernelSpec::perturbed(base, matrix, role)
        }
        "tabulated" => {
            if let Some(path) = &config.csv {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::validation(format!("{at}.csv"), format!("cannot read {path}: {e}"))
                })?;
                KernelSpec::tabulated_from_csv(&text, role)
            } else {
                let rs = config.r.clone().ok_or_else(|| {
                    CliError::validation(format!("{at}.r"), "required for kind \"tabulated\"")
                })?;
                let values = config.values.clone().ok_or_else(|| {
                    CliError::validation(format!("{at}.values"), "required for kind \"tabulated\"")
                })?;
                KernelSpec::tabulated(rs, values, role)
            }
        }
        other => {
            return Err(CliError::validation(
                format!("{at}.kind"),
                format!("unknown kernel kind {other:?}"),
            ))
        }
    };
    spec.map_err(|e| CliError::validation(at, e.to_string()))
}

fn build_integrator(section: &IntegratorSection) -> Result<IntegratorConfig, CliError> {
    if !(section.t_end > 0.0) || !section.t_end.is_finite() {
        return Err(CliError::validation(
            "integrator.t_end",
            format!("t_end must be positive and finite, got {}", section.t_end),
        ));
    }
    let mut cfg = match section.scheme.as_str() {
        "rk4" => {
            let dt = section.dt.ok_or_else(|| {
                CliError::validation("integrator.dt", "required for scheme \"rk4\"")
            })?;
            if !(dt > 0.0) || dt > section.t_end {
                return Err(CliError::validation(
                    "integrator.dt",
                    format!("need 0 < dt <= t_end, got {dt}"),
                ));
            }
            IntegratorConfig::rk4(dt, section.t_end)
        }
        "rk45" => {
            let mut cfg = IntegratorConfig::rk45(section.t_end);
            if let Scheme::Rk45Adaptive {
                rtol,
                atol,
                dt_min,
                dt_max,
            } = &mut cfg.scheme
            {
                if let Some(v) = section.rtol {
                    *rtol = v;
                }
                if let Some(v) = section.atol {
                    *atol = v;
                }
                if let Some(v) = section.dt_min {
                    *dt_min = v;
                }
                if let Some(v) = section.dt_max {
                    *dt_max = v;
                }
            }
            cfg
        }
        other => {
            return Err(CliError::validation(
                "integrator.scheme",
                format!("unknown scheme {other:?} (expected \"rk4\" or \"rk45\")"),
            ))
        }
    };
    if let Some(stride) = section.sample_stride {
        if stride == 0 {
            return Err(CliError::validation(
                "integrator.sample_stride",
                "sample_stride must be at least 1",
            ));
        }
        cfg.sample_stride = stride;
    }
    if let Some(floor) = section.t_floor {
        if !(floor > 0.0) {
            return Err(CliError::validation(
                "integrator.t_floor",
                format!("t_floor must be positive, got {floor}"),
            ));
        }
        cfg.t_floor = floor;
    }
    Ok(cfg)
}
