//! Diagnostics and theorem verification on top of the particle models:
//! conserved quantities and entropy accounting, flocking metrics, temperature
//! bounds and asymptotic limits, per-regime decay constants, envelope
//! verification against sampled trajectories, exponential-rate fitting, and
//! classical-limit deviation studies.
//!
//! Conventions shared by every relativistic constant: the printed thresholds
//! carry unspecified O(c^-2) corrections, which are evaluated at leading
//! order (corrections set to zero); reports record that through
//! `leading_order_convention`. Relativistic temperature bounds reuse the
//! classical formulas with the relativistic total energy in place of the
//! classical one, and the asymptotic temperature comes from a bracketed root
//! solve of the conserved-energy relation.

use std::error::Error;
use std::fmt;

use crate::dynamics::{
    integrate, DynamicsError, Ensemble, IntegrationOutcome, IntegratorConfig, Model,
};
use crate::gas_model::{error_term_f, relativistic_energy, speed_from_momentum, GasModelError};
use crate::kernels::{KernelError, KernelSpec, KernelStats};
use crate::special_functions::EvalPolicy;

/// Default head-room factor applied above each strict decay-constant
/// threshold: A = (1 + margin) * threshold.
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Search interval scale and resolution for the regime-3 cohesion radius.
const U_SEARCH_SCALE: f64 = 1.0e3;
const U_SEARCH_SAMPLES: usize = 512;
const U_SEARCH_BISECTIONS: usize = 200;

#[derive(Debug)]
pub enum AnalysisError {
    Dynamics(DynamicsError),
    Gas(GasModelError),
    Kernel(KernelError),
    Domain { what: &'static str, value: f64 },
    Usage(String),
    RootNotBracketed { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::Dynamics(e) => write!(f, "dynamics: {e}"),
            AnalysisError::Gas(e) => write!(f, "gas model: {e}"),
            AnalysisError::Kernel(e) => write!(f, "kernel: {e}"),
            AnalysisError::Domain { what, value } => {
                write!(f, "{what} out of domain: {value}")
            }
            AnalysisError::Usage(msg) => write!(f, "usage: {msg}"),
            AnalysisError::RootNotBracketed { lo, hi, f_lo, f_hi } => write!(
                f,
                "asymptotic temperature not bracketed on ({lo}, {hi}): endpoint values {f_lo}, {f_hi}"
            ),
        }
    }
}

impl Error for AnalysisError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            AnalysisError::Dynamics(e) => Some(e),
            AnalysisError::Gas(e) => Some(e),
            AnalysisError::Kernel(e) => Some(e),
            _ => None,
        }
    }
}

impl From<DynamicsError> for AnalysisError {
    fn from(e: DynamicsError) -> Self {
        AnalysisError::Dynamics(e)
    }
}

impl From<GasModelError> for AnalysisError {
    fn from(e: GasModelError) -> Self {
        AnalysisError::Gas(e)
    }
}

impl From<KernelError> for AnalysisError {
    fn from(e: KernelError) -> Self {
        AnalysisError::Kernel(e)
    }
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(v: &[f64; 3]) -> f64 {
    dot3(v, v).sqrt()
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm3(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

fn heat_capacity(ens: &Ensemble) -> f64 {
    f64::from(ens.chi.degrees_of_freedom()) / 2.0
}

/// Totals that the flows preserve (or, for entropy, produce monotonically).
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedSet {
    /// Sum of per-particle momentum vectors in the model's own variables.
    pub momentum: [f64; 3],
    /// Total energy in the model's own variables.
    pub energy: f64,
    /// Absolute entropy, defined only classically as the sum of ln T. The
    /// relativistic entropy exists only differentially; accumulate
    /// `entropy_rate` over samples instead.
    pub entropy: Option<f64>,
    /// Instantaneous entropy production rate, nonnegative along every flow.
    /// Classically this is d/dt of `entropy`; relativistically it is the
    /// production of the Gibbs entropy. Identically zero for the mechanical
    /// model, which carries no thermodynamics.
    pub entropy_rate: f64,
}

/// Momentum, energy, entropy, and entropy production of one state.
pub fn conserved(ens: &Ensemble, phi: &KernelSpec, zeta: &KernelSpec) -> Result<ConservedSet> {
    ens.validate()?;
    let momentum = total_momentum(ens)?;
    let energy = total_energy(ens)?;
    let entropy = match ens.model {
        Model::ClassicalTCS => Some(ens.temps.iter().map(|t| t.ln()).sum()),
        _ => None,
    };
    let entropy_rate = entropy_production_rate(ens, phi, zeta)?;
    Ok(ConservedSet {
        momentum,
        energy,
        entropy,
        entropy_rate,
    })
}

fn total_momentum(ens: &Ensemble) -> Result<[f64; 3]> {
    let mut momentum = [0.0; 3];
    for a in 0..ens.n() {
        let w = ens.momentum_vector(a)?;
        for axis in 0..3 {
            momentum[axis] += w[axis];
        }
    }
    Ok(momentum)
}

fn total_energy(ens: &Ensemble) -> Result<f64> {
    let policy = EvalPolicy::default();
    let cv = heat_capacity(ens);
    let mut energy = 0.0;
    for a in 0..ens.n() {
        energy += match ens.model {
            Model::ClassicalTCS => cv * ens.temps[a] + 0.5 * dot3(&ens.v[a], &ens.v[a]),
            Model::RTCSSynge => {
                relativistic_energy(ens.chi, ens.temps[a], ens.v[a].as_slice(), ens.c, &policy)?
            }
            Model::RTCSSimplified => {
                let g = lorentz(ens, a)?;
                g * ens.temps[a] + g * g * dot3(&ens.v[a], &ens.v[a]) / (g + 1.0)
            }
            Model::RelativisticCSMechanical => {
                let g = lorentz(ens, a)?;
                g * g * dot3(&ens.v[a], &ens.v[a]) / (g + 1.0)
            }
        };
    }
    Ok(energy)
}

fn lorentz(ens: &Ensemble, a: usize) -> Result<f64> {
    crate::gas_model::lorentz_gamma(ens.v[a].as_slice(), ens.c).map_err(AnalysisError::Gas)
}

/// Entropy production rate of one state. Classically this equals d/dt of the
/// sum of ln T along the flow; relativistically it is the pairwise quadratic
/// form with Lorentz factors. The mechanical model produces no entropy.
fn entropy_production_rate(ens: &Ensemble, phi: &KernelSpec, zeta: &KernelSpec) -> Result<f64> {
    if ens.model == Model::RelativisticCSMechanical {
        return Ok(0.0);
    }
    let n = ens.n();
    let scale = 1.0 / (2.0 * n as f64);
    let mut rate = 0.0;
    for a in 0..n {
        let ga = if ens.model == Model::ClassicalTCS {
            1.0
        } else {
            lorentz(ens, a)?
        };
        for b in 0..n {
            if b == a {
                continue;
            }
            let gb = if ens.model == Model::ClassicalTCS {
                1.0
            } else {
                lorentz(ens, b)?
            };
            let r = distance(&ens.x[a], &ens.x[b]);
            let p = phi.weight(a, b, r)?;
            let z = zeta.weight(a, b, r)?;
            let mut vdiff2 = 0.0;
            for axis in 0..3 {
                let d = gb * ens.v[b][axis] / ens.temps[b] - ga * ens.v[a][axis] / ens.temps[a];
                vdiff2 += d * d;
            }
            let tdiff = gb / ens.temps[b] - ga / ens.temps[a];
            rate += scale * (p * vdiff2 + z * tdiff * tdiff);
        }
    }
    if ens.model == Model::ClassicalTCS {
        // d/dt sum ln T carries the inverse heat capacity.
        rate /= heat_capacity(ens);
    }
    Ok(rate)
}

/// Trapezoidal accumulator for the relativistic entropy, which the model
/// defines only through its production rate.
#[derive(Debug, Clone, Default)]
pub struct EntropyAccumulator {
    prev: Option<(f64, f64)>,
    total: f64,
}

impl EntropyAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one (time, production rate) sample; returns the running total.
    pub fn push(&mut self, t: f64, rate: f64) -> f64 {
        if let Some((t0, r0)) = self.prev {
            self.total += 0.5 * (rate + r0) * (t - t0);
        }
        self.prev = Some((t, rate));
        self.total
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Pairwise spreads and configuration norms of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockingMetrics {
    /// max over pairs of |x_a - x_b|.
    pub position_spread: f64,
    /// max over pairs of |v_a - v_b|.
    pub velocity_spread: f64,
    /// max over pairs of |T_a - T_b|.
    pub temperature_spread: f64,
    /// max over pairs of |w_a - w_b| in the model's momentum variable;
    /// equals `velocity_spread` classically.
    pub momentum_spread: f64,
    /// Euclidean norm of the stacked position vector.
    pub norm_x: f64,
    /// Euclidean norm of the stacked velocity vector.
    pub norm_v: f64,
    /// Euclidean norm of the stacked momentum vector; equals `norm_v`
    /// classically.
    pub norm_w: f64,
    /// Weighted temperature deviation sqrt((2 chi + 1)/2 * sum (T_a - T8)^2)
    /// against the supplied asymptotic temperature.
    pub norm_temp_dev: f64,
}

/// Spreads and norms of one state, measured against an asymptotic
/// temperature `t_inf` (use `asymptotic_limits` for the matching model).
pub fn flocking_metrics(ens: &Ensemble, t_inf: f64) -> Result<FlockingMetrics> {
    ens.validate()?;
    let n = ens.n();
    let mut w = Vec::with_capacity(n);
    for a in 0..n {
        w.push(ens.momentum_vector(a)?);
    }
    let mut position_spread: f64 = 0.0;
    let mut velocity_spread: f64 = 0.0;
    let mut temperature_spread: f64 = 0.0;
    let mut momentum_spread: f64 = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            position_spread = position_spread.max(distance(&ens.x[a], &ens.x[b]));
            velocity_spread = velocity_spread.max(distance(&ens.v[a], &ens.v[b]));
            temperature_spread = temperature_spread.max((ens.temps[a] - ens.temps[b]).abs());
            momentum_spread = momentum_spread.max(distance(&w[a], &w[b]));
        }
    }
    let norm_x = ens.x.iter().map(|p| dot3(p, p)).sum::<f64>().sqrt();
    let norm_v = ens.v.iter().map(|p| dot3(p, p)).sum::<f64>().sqrt();
    let norm_w = w.iter().map(|p| dot3(p, p)).sum::<f64>().sqrt();
    let cv = heat_capacity(ens);
    let norm_temp_dev = (cv
        * ens
            .temps
            .iter()
            .map(|t| (t - t_inf) * (t - t_inf))
            .sum::<f64>())
    .sqrt();
    Ok(FlockingMetrics {
        position_spread,
        velocity_spread,
        temperature_spread,
        momentum_spread,
        norm_x,
        norm_v,
        norm_w,
        norm_temp_dev,
    })
}

/// A priori temperature bounds from the initial state: every later
/// temperature stays inside [T_lower, T_upper]. Classically these are exact
/// consequences of conservation and entropy growth; for relativistic models
/// the same formulas are evaluated with the relativistic total energy, and
/// hold up to a model constant near one when c is large.
pub fn temperature_bounds(initial: &Ensemble) -> Result<(f64, f64)> {
    initial.validate()?;
    let energy = total_energy(initial)?;
    let n = initial.n();
    let dof = f64::from(initial.chi.degrees_of_freedom());
    let t_upper = 2.0 * energy / dof;
    let product: f64 = initial.temps.iter().product();
    let t_lower = product / t_upper.powi(n as i32 - 1);
    Ok((t_lower, t_upper))
}

/// Common limits of velocity (or momentum) and temperature when the flow
/// aligns.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticLimits {
    /// Common velocity limit (classical) or momentum limit (relativistic).
    pub momentum_limit: [f64; 3],
    /// Common temperature limit.
    pub t_inf: f64,
}

/// Asymptotic velocity/momentum and temperature from the initial invariants.
pub fn asymptotic_limits(initial: &Ensemble) -> Result<AsymptoticLimits> {
    initial.validate()?;
    let momentum = total_momentum(initial)?;
    let energy = total_energy(initial)?;
    let n = initial.n() as f64;
    let momentum_limit = [momentum[0] / n, momentum[1] / n, momentum[2] / n];
    let cv = heat_capacity(initial);
    let m2 = dot3(&momentum, &momentum);
    match initial.model {
        Model::ClassicalTCS => {
            let t_inf = (energy / n - m2 / (2.0 * n * n)) / cv;
            Ok(AsymptoticLimits {
                momentum_limit,
                t_inf,
            })
        }
        Model::RelativisticCSMechanical => {
            // Temperatures are constants of the mechanical flow; the mean is
            // the only sensible scalar summary.
            let t_inf = initial.temps.iter().sum::<f64>() / n;
            Ok(AsymptoticLimits {
                momentum_limit,
                t_inf,
            })
        }
        Model::RTCSSynge | Model::RTCSSimplified => {
            let (t_lower, t_upper) = temperature_bounds(initial)?;
            let w_norm = norm3(&momentum_limit);
            let target = energy / n;
            let policy = EvalPolicy::default();
            let c = initial.c;
            let residual = |t: f64| -> Result<f64> {
                match initial.model {
                    Model::RTCSSynge => {
                        let speed = speed_from_momentum(initial.chi, t, w_norm, c, &policy)?;
                        let v = [speed, 0.0, 0.0];
                        let f = error_term_f(initial.chi, t, v.as_slice(), c, &policy)?;
                        Ok(cv * t + m2 / (2.0 * n * n) + f / (c * c) - target)
                    }
                    Model::RTCSSimplified => {
                        let hs = 1.0 + t / (c * c);
                        let mu = w_norm / hs;
                        let g = (1.0 + (mu / c) * (mu / c)).sqrt();
                        let v2 = (mu / g) * (mu / g);
                        Ok(g * t + g * g * v2 / (g + 1.0) - target)
                    }
                    _ => unreachable!(),
                }
            };
            let t_inf = bisect_root(t_lower / 2.0, 2.0 * t_upper, residual)?;
            Ok(AsymptoticLimits {
                momentum_limit,
                t_inf,
            })
        }
    }
}

/// Bisection on a bracketed scalar root; errors when the endpoints do not
/// straddle zero.
fn bisect_root(lo: f64, hi: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(AnalysisError::RootNotBracketed { lo, hi, f_lo, f_hi });
    }
    let (mut a, mut b, mut f_a) = (lo, hi, f_lo);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (b - a).abs() <= 1e-15 * mid.abs() {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_a.signum() {
            a = mid;
            f_a = f_mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Condition flags attached to a regime's constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegimeConditions {
    /// Regime 2: the perturbation bound on the kernel spread (classical
    /// form epsilon <= phi_min T_lower / (2 T_upper); relativistic form
    /// 2 epsilon / T_lower <= phi_min / T_upper).
    pub epsilon_ok: Option<bool>,
    /// Relativistic regime 1: (2 chi + 3)/(2 c^2) <= 1/(2 T_upper).
    pub light_speed_ok: Option<bool>,
    /// Regime 3: a cohesion radius satisfying the well-prepared inequalities
    /// exists in the search interval.
    pub well_prepared: Option<bool>,
}

/// Decay constants and envelope parameters for one flocking regime.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub regime: u8,
    pub relativistic: bool,
    pub t_lower: f64,
    pub t_upper: f64,
    /// Common velocity (classical) or momentum (relativistic) limit.
    pub momentum_limit: [f64; 3],
    pub t_inf: f64,
    /// Strict lower threshold for the Lyapunov weight A.
    pub a_threshold: f64,
    /// Chosen A = (1 + margin) * threshold.
    pub a_value: f64,
    /// Decay rate of the Lyapunov envelope.
    pub lambda: f64,
    /// Decay rate of the velocity (or momentum) norm envelope.
    pub velocity_rate: f64,
    /// Right-hand side of the uniform position-norm bound.
    pub position_bound: f64,
    /// Regime 3 only: the cohesion radius found by the search.
    pub u_star: Option<f64>,
    pub conditions: RegimeConditions,
    /// False when the regime does not apply to the given data (no cohesion
    /// radius found); the decay fields are NaN in that case.
    pub feasible: bool,
    pub lambda_positive: bool,
    /// True when O(c^-2) corrections inside the printed constants were
    /// evaluated as zero (always set on relativistic reports).
    pub leading_order_convention: bool,
}

/// Evaluate the decay constants of one flocking regime from the initial
/// state. Regime 1 assumes unit kernels, regime 2 bounded perturbations of a
/// constant (stats supply the bounds), regime 3 radially decaying kernels
/// evaluated through `weight`. The flag on the report distinguishes the
/// classical and relativistic variants, which differ in their printed
/// constants.
pub fn regime_constants(
    initial: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
    stats: &KernelStats,
    regime: u8,
    margin: f64,
) -> Result<BoundsReport> {
    if !(1..=3).contains(&regime) {
        return Err(AnalysisError::Usage(format!(
            "regime must be 1, 2, or 3, got {regime}"
        )));
    }
    if !margin.is_finite() || margin <= 0.0 {
        return Err(AnalysisError::Domain {
            what: "threshold margin",
            value: margin,
        });
    }
    initial.validate()?;
    let relativistic = initial.model.is_relativistic();
    let n = initial.n() as f64;
    let dof = f64::from(initial.chi.degrees_of_freedom());
    let (t_lower, t_upper) = temperature_bounds(initial)?;
    let limits = asymptotic_limits(initial)?;
    let t_inf = limits.t_inf;

    // Velocity norm classically, momentum norm relativistically.
    let mut v0sq = 0.0;
    for a in 0..initial.n() {
        let w = if relativistic {
            initial.momentum_vector(a)?
        } else {
            initial.v[a]
        };
        v0sq += dot3(&w, &w);
    }
    let v0 = v0sq.sqrt();
    let x0 = initial.x.iter().map(|p| dot3(p, p)).sum::<f64>().sqrt();

    // Position-integral factor: relativistic speeds are bounded by
    // c^2 |w| / (1 + c^2).
    let speed_factor = if relativistic {
        let c2 = initial.c * initial.c;
        c2 / (1.0 + c2)
    } else {
        1.0
    };

    let mut conditions = RegimeConditions::default();
    let mut u_star = None;
    let mut feasible = true;

    let spread_term = {
        let d = (n - 1.0) * (t_upper - t_lower);
        d * d / (2.0 * n * n * t_lower * t_inf)
    };

    let (a_threshold, lambda_given_a, velocity_rate, position_bound): (
        f64,
        Box<dyn Fn(f64) -> f64>,
        f64,
        f64,
    ) = match (regime, relativistic) {
        (1, false) => {
            let thresh = v0sq / (dof * dof * n * n * t_upper)
                + t_upper
                + spread_term * t_upper / 2.0;
            let slope = 2.0 * v0sq / (dof * dof * n * n * t_upper * t_upper) + 2.0 + spread_term;
            let base = 4.0 / (dof * t_upper * t_upper);
            (
                thresh,
                Box::new(move |a: f64| base.min(2.0 / t_upper - slope / a)),
                1.0 / t_upper,
                x0 + v0 * t_upper,
            )
        }
        (1, true) => {
            conditions.light_speed_ok =
                Some((dof + 2.0) / (2.0 * initial.c * initial.c) <= 1.0 / (2.0 * t_upper));
            let thresh = t_upper
                + spread_term * t_upper / 2.0
                + v0sq / (dof * dof * n * n * t_upper);
            let slope = 2.0 + spread_term + 2.0 * v0sq / (dof * dof * n * n * t_upper * t_upper);
            let base = 4.0 / (dof * t_upper * t_upper);
            (
                thresh,
                Box::new(move |a: f64| base.min(2.0 / t_upper - slope / a)),
                1.0 / (2.0 * t_upper),
                x0 + 2.0 * speed_factor * t_upper * v0,
            )
        }
        (2, false) => {
            let (phi_min, zeta_min, eps) = (stats.phi_min, stats.zeta_min, stats.epsilon);
            conditions.epsilon_ok = Some(eps <= phi_min * t_lower / (2.0 * t_upper));
            let tilt = 2.0 + v0sq / (2.0 * dof * t_lower);
            let thresh = (4.0 / 7.0)
                * (2.0 * zeta_min * v0sq / (dof * dof * n * n * phi_min * t_upper)
                    + (2.0 + spread_term) * t_upper
                    + tilt * eps * t_upper / phi_min);
            let slope = 2.0 * zeta_min * v0sq / (dof * dof * n * n * t_upper * t_upper)
                + tilt * eps
                + (2.0 + spread_term) * phi_min;
            let base = 4.0 * zeta_min / (dof * t_upper * t_upper);
            (
                thresh,
                Box::new(move |a: f64| base.min(7.0 * phi_min / (4.0 * t_upper) - slope / a)),
                phi_min / (2.0 * t_upper),
                x0 + 2.0 * t_upper * v0 / phi_min,
            )
        }
        (2, true) => {
            let (phi_min, zeta_min, eps) = (stats.phi_min, stats.zeta_min, stats.epsilon);
            conditions.epsilon_ok = Some(2.0 * eps / t_lower <= phi_min / t_upper);
            // The printed momentum-norm terms carry no 1/N^2 here, unlike
            // their classical counterparts; evaluated as printed.
            let dev = t_inf - t_lower;
            let tilt = 2.0 + dev * dev / (2.0 * t_lower * t_inf);
            let thresh = (4.0 / 7.0)
                * (8.0 * zeta_min * v0sq / (dof * dof * phi_min * t_upper)
                    + (2.0 + spread_term) * t_upper
                    + eps * t_upper / phi_min * tilt);
            let slope = (2.0 + spread_term) * phi_min
                + 8.0 * zeta_min * v0sq / (dof * dof * t_upper * t_upper)
                + eps * tilt;
            let base = 4.0 * zeta_min / (dof * t_upper * t_upper);
            (
                thresh,
                Box::new(move |a: f64| base.min(7.0 * phi_min / (4.0 * t_upper) - slope / a)),
                phi_min / (2.0 * t_upper),
                x0 + 2.0 * speed_factor * t_upper * v0 / phi_min,
            )
        }
        (3, _) => {
            let phi0 = phi.weight(0, 1, 0.0)?;
            // chi-rate of the bootstrap: half the dissipation exponent at
            // cohesion radius u. Identical in both variants once O(c^-2)
            // terms are dropped.
            let rate_at = |u: f64| -> Result<f64> {
                let phi_u = phi.weight(0, 1, u)?;
                let gap = phi0 - phi_u;
                Ok(0.5 * (phi0 / t_upper - gap * gap / (phi0 * t_lower)))
            };
            let lo = std::f64::consts::SQRT_2 * x0;
            let coeff = std::f64::consts::SQRT_2 * speed_factor * v0;
            let found = search_cohesion_radius(lo, coeff, &rate_at)?;
            conditions.well_prepared = Some(found.is_some());
            match found {
                None => {
                    feasible = false;
                    (
                        f64::NAN,
                        Box::new(|_| f64::NAN) as Box<dyn Fn(f64) -> f64>,
                        f64::NAN,
                        f64::NAN,
                    )
                }
                Some(u) => {
                    u_star = Some(u);
                    let rate = rate_at(u)?;
                    let zeta_u = zeta.weight(0, 1, u)?;
                    let tilt = if relativistic {
                        let dev = t_upper - t_lower;
                        2.0 + dev * dev / (2.0 * t_lower * t_inf)
                    } else {
                        2.0 + v0sq / (2.0 * dof * t_lower)
                    };
                    let bracket = 2.0 * zeta_u * v0sq / (dof * dof * n * n * t_upper * t_upper)
                        + tilt * phi0;
                    let thresh = bracket / (2.0 * rate);
                    let base = 4.0 * zeta_u / (dof * t_upper * t_upper);
                    (
                        thresh,
                        Box::new(move |a: f64| base.min(2.0 * rate - bracket / a)),
                        rate,
                        u / std::f64::consts::SQRT_2,
                    )
                }
            }
        }
        _ => unreachable!(),
    };

    let a_value = (1.0 + margin) * a_threshold;
    let lambda = lambda_given_a(a_value);
    Ok(BoundsReport {
        regime,
        relativistic,
        t_lower,
        t_upper,
        momentum_limit: limits.momentum_limit,
        t_inf,
        a_threshold,
        a_value,
        lambda,
        velocity_rate,
        position_bound,
        u_star,
        conditions,
        feasible,
        lambda_positive: lambda > 0.0,
        leading_order_convention: relativistic,
    })
}

/// Smallest admissible cohesion radius U in [lo, 1e3 (lo + 1)] satisfying
/// rate(U) > 0 and U >= lo + coeff / rate(U), located by a scan and a
/// boundary bisection. Decaying kernels confine the admissible window close
/// to lo, so the scan spaces its offsets from lo geometrically; windows
/// narrower than a few percent of their own offset are beyond its
/// resolution. None when no admissible point is found.
fn search_cohesion_radius(
    lo: f64,
    coeff: f64,
    rate_at: &dyn Fn(f64) -> Result<f64>,
) -> Result<Option<f64>> {
    let hi = U_SEARCH_SCALE * (lo + 1.0);
    let admissible = |u: f64| -> Result<bool> {
        let rate = rate_at(u)?;
        Ok(rate > 0.0 && u >= lo + coeff / rate)
    };
    let span = hi - lo;
    let offset = |k: usize| {
        if k == 0 {
            0.0
        } else {
            span * 10.0f64.powf(-9.0 * (1.0 - k as f64 / U_SEARCH_SAMPLES as f64))
        }
    };
    let mut previous = lo;
    let mut entry = None;
    for k in 0..=U_SEARCH_SAMPLES {
        let u = lo + offset(k);
        if admissible(u)? {
            entry = Some((previous, u));
            break;
        }
        previous = u;
    }
    let Some((mut bad, mut good)) = entry else {
        return Ok(None);
    };
    if bad == good {
        return Ok(Some(good));
    }
    for _ in 0..U_SEARCH_BISECTIONS {
        let mid = 0.5 * (bad + good);
        if admissible(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(Some(good))
}

/// One trajectory sample reduced to the norms the envelopes constrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    /// Position configuration norm.
    pub norm_x: f64,
    /// Velocity norm classically, momentum norm relativistically; must match
    /// the report's variant.
    pub norm_v: f64,
    /// Weighted temperature deviation norm against the report's T-infinity.
    pub norm_temp_dev: f64,
}

/// Outcome of one envelope inequality over a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCheck {
    pub pass: bool,
    /// Minimum slack (bound minus observed) over samples; negative means a
    /// violation.
    pub worst_slack: f64,
    /// Sample time where the slack is smallest.
    pub worst_time: f64,
}

/// Verdicts of the three theorem envelopes over a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeReport {
    pub position: EnvelopeCheck,
    pub velocity: EnvelopeCheck,
    pub lyapunov: EnvelopeCheck,
    pub all_pass: bool,
}

/// Check the position bound, the velocity-norm envelope, and the Lyapunov
/// envelope pointwise at every sample. Slacks are absolute; a check passes
/// when its worst slack is above a small negative tolerance proportional to
/// the envelope's own scale (integration and sampling are inexact).
pub fn envelope_check(samples: &[TrajectorySample], report: &BoundsReport) -> Result<EnvelopeReport> {
    if samples.is_empty() {
        return Err(AnalysisError::Usage("no trajectory samples".into()));
    }
    if samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(AnalysisError::Usage(
            "trajectory samples must have strictly increasing times".into(),
        ));
    }
    if !report.feasible {
        return Err(AnalysisError::Usage(
            "the report marks its regime infeasible for this data".into(),
        ));
    }
    let v0 = samples[0].norm_v;
    let l0 = samples[0].norm_temp_dev * samples[0].norm_temp_dev + report.a_value * v0 * v0;

    let mut position = EnvelopeCheck {
        pass: true,
        worst_slack: f64::INFINITY,
        worst_time: samples[0].t,
    };
    let mut velocity = position;
    let mut lyapunov = position;
    for s in samples {
        let slack = report.position_bound - s.norm_x;
        if slack < position.worst_slack {
            position.worst_slack = slack;
            position.worst_time = s.t;
        }
        let slack = v0 * (-report.velocity_rate * s.t).exp() - s.norm_v;
        if slack < velocity.worst_slack {
            velocity.worst_slack = slack;
            velocity.worst_time = s.t;
        }
        let lya = s.norm_temp_dev * s.norm_temp_dev + report.a_value * s.norm_v * s.norm_v;
        let slack = l0 * (-report.lambda * s.t).exp() - lya;
        if slack < lyapunov.worst_slack {
            lyapunov.worst_slack = slack;
            lyapunov.worst_time = s.t;
        }
    }
    position.pass = position.worst_slack >= -1e-9 * report.position_bound.abs().max(1.0);
    velocity.pass = velocity.worst_slack >= -1e-9 * v0.max(1.0);
    lyapunov.pass = lyapunov.worst_slack >= -1e-9 * l0.max(1.0);
    Ok(EnvelopeReport {
        position,
        velocity,
        lyapunov,
        all_pass: position.pass && velocity.pass && lyapunov.pass,
    })
}

/// Least-squares exponential fit of a positive scalar series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Fitted rate r in y ~ exp(-r t); positive for decaying series.
    pub rate: f64,
    pub window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub samples_used: usize,
}

/// Fit ln y against t on a window by least squares; the rate is the negated
/// slope.
pub fn fit_decay_rate(ts: &[f64], ys: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if ts.len() != ys.len() {
        return Err(AnalysisError::Usage(format!(
            "time and value series differ in length: {} vs {}",
            ts.len(),
            ys.len()
        )));
    }
    let mut pairs = Vec::new();
    for (&t, &y) in ts.iter().zip(ys) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(y > 0.0) || !y.is_finite() {
            return Err(AnalysisError::Domain {
                what: "series sample",
                value: y,
            });
        }
        pairs.push((t, y.ln()));
    }
    if pairs.len() < 10 {
        return Err(AnalysisError::Usage(format!(
            "decay fit needs at least 10 samples in the window, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_t = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(t, l) in &pairs {
        cov += (t - mean_t) * (l - mean_l);
        var += (t - mean_t) * (t - mean_t);
    }
    if var == 0.0 {
        return Err(AnalysisError::Usage(
            "decay fit needs samples at distinct times".into(),
        ));
    }
    let slope = cov / var;
    let intercept = mean_l - slope * mean_t;
    let mut sq = 0.0;
    for &(t, l) in &pairs {
        let r = l - (intercept + slope * t);
        sq += r * r;
    }
    Ok(DecayFit {
        rate: -slope,
        window,
        residual: (sq / n).sqrt(),
        samples_used: pairs.len(),
    })
}

/// Deviation of one finite-c run from the classical flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationRow {
    pub c: f64,
    /// Max over sample times and particles of the largest component
    /// difference across positions, velocities, and temperatures. NaN when
    /// the run failed.
    pub max_deviation: f64,
    pub completed: bool,
}

/// Deviation table of the relativistic flow against the classical one, with
/// the fitted log-log slope of deviation against c (the leading correction
/// is quadratic, so the expected slope is -2).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalLimitStudy {
    pub rows: Vec<DeviationRow>,
    /// Slope of ln(deviation) against ln(c) over completed finite-c rows
    /// with nonzero deviation; None with fewer than two such rows.
    pub slope: Option<f64>,
}

/// Integrate the classical flow once and the Synge-closure flow at each c in
/// the list from the same initial data, and tabulate the deviations. Rows
/// with infinite c compare the classical flow against itself (deviation
/// exactly zero, excluded from the slope fit). Failed runs yield marked rows
/// rather than an error.
pub fn classical_limit_study(
    base: &Ensemble,
    c_list: &[f64],
    phi: &KernelSpec,
    zeta: &KernelSpec,
    cfg: &IntegratorConfig,
) -> Result<ClassicalLimitStudy> {
    if base.model != Model::ClassicalTCS {
        return Err(AnalysisError::Usage(
            "the classical-limit baseline must be the classical model".into(),
        ));
    }
    let mut reference: Vec<Ensemble> = Vec::new();
    let report = integrate(base, phi, zeta, cfg, |_, state| {
        reference.push(state.clone());
    })?;
    if report.outcome != IntegrationOutcome::Completed {
        return Err(AnalysisError::Usage(
            "the classical baseline run did not complete".into(),
        ));
    }

    let mut rows = Vec::new();
    for &c in c_list {
        if !c.is_finite() {
            rows.push(DeviationRow {
                c,
                max_deviation: 0.0,
                completed: true,
            });
            continue;
        }
        let run = Ensemble::new(
            base.x.clone(),
            base.v.clone(),
            base.temps.clone(),
            base.chi,
            c,
            Model::RTCSSynge,
        )
        .and_then(|ens| {
            let mut samples = Vec::new();
            let report = integrate(&ens, phi, zeta, cfg, |_, state| {
                samples.push(state.clone());
            })?;
            Ok((report, samples))
        });
        match run {
            Err(_) => rows.push(DeviationRow {
                c,
                max_deviation: f64::NAN,
                completed: false,
            }),
            Ok((report, samples)) => {
                if report.outcome != IntegrationOutcome::Completed
                    || samples.len() != reference.len()
                {
                    rows.push(DeviationRow {
                        c,
                        max_deviation: f64::NAN,
                        completed: false,
                    });
                    continue;
                }
                let mut dev: f64 = 0.0;
                for (rel, cls) in samples.iter().zip(&reference) {
                    for a in 0..base.n() {
                        for axis in 0..3 {
                            dev = dev.max((rel.x[a][axis] - cls.x[a][axis]).abs());
                            dev = dev.max((rel.v[a][axis] - cls.v[a][axis]).abs());
                        }
                        dev = dev.max((rel.temps[a] - cls.temps[a]).abs());
                    }
                }
                rows.push(DeviationRow {
                    c,
                    max_deviation: dev,
                    completed: true,
                });
            }
        }
    }

    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.completed && r.c.is_finite() && r.max_deviation > 0.0)
        .map(|r| (r.c.ln(), r.max_deviation.ln()))
        .collect();
    let slope = if fit.len() >= 2 {
        let n = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let var: f64 = fit.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some(cov / var)
    } else {
        None
    };
    Ok(ClassicalLimitStudy { rows, slope })
}
