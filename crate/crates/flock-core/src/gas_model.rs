//! Synge-type energy closures per atomicity, their derivatives, and the
//! relativistic kinematics built on them.
//!
//! The closure factor H(chi, gamma) with gamma = c^2 / T carries the whole
//! thermodynamic content of the gas: pressure is p = rho T exactly, energy
//! density is e = rho c^2 (H - 1/gamma), and the momentum of a particle is
//! w = Gamma H v. Everything here is assembled so that the cancellations of
//! the large-gamma regime happen inside dedicated difference series rather
//! than between O(1) floating-point values: H - 1, the residual
//! H - 1 - (2 chi + 3)/(2 gamma), and dH/dgamma keep full relative accuracy
//! however large gamma gets. That matters because energy conservation in the
//! relativistic dynamics differentiates through these quantities with a
//! factor c^2 in front.

use crate::special_functions::{
    bessel_k_scaled, scaled_chi4_denom, scaled_diff_k1_k0, scaled_k0_minus_chi4_denom,
    scaled_k1_minus_gamma_tail, EvalPolicy, SpecialFnError,
};
use std::fmt;

/// Gas species by internal structure: chi internal-energy pairs on top of
/// three translational degrees of freedom, D = 2 chi + 1 in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atomicity {
    Monatomic,
    Diatomic,
    Triatomic,
    Tetratomic,
}

impl Atomicity {
    pub const ALL: [Atomicity; 4] = [
        Atomicity::Monatomic,
        Atomicity::Diatomic,
        Atomicity::Triatomic,
        Atomicity::Tetratomic,
    ];

    pub fn from_chi(chi: u32) -> Result<Self> {
        match chi {
            1 => Ok(Atomicity::Monatomic),
            2 => Ok(Atomicity::Diatomic),
            3 => Ok(Atomicity::Triatomic),
            4 => Ok(Atomicity::Tetratomic),
            _ => Err(GasModelError::Domain {
                what: "atomicity chi (must be 1..=4)",
                value: f64::from(chi),
            }),
        }
    }

    pub fn chi(self) -> u32 {
        match self {
            Atomicity::Monatomic => 1,
            Atomicity::Diatomic => 2,
            Atomicity::Triatomic => 3,
            Atomicity::Tetratomic => 4,
        }
    }

    /// D = 2 chi + 1.
    pub fn degrees_of_freedom(self) -> u32 {
        2 * self.chi() + 1
    }

    /// Classical specific heat at constant volume, (2 chi + 1) / 2.
    pub fn specific_heat(self) -> f64 {
        f64::from(self.degrees_of_freedom()) / 2.0
    }

    /// Lower end of the validated closure range in gamma = c^2 / T. The
    /// monatomic and diatomic closures are plain Bessel ratios, safe from
    /// gamma = 5; the tail-bearing closures start at 10, where the
    /// tetratomic denominator's positivity margin is comfortable.
    pub fn gamma_min(self) -> f64 {
        match self {
            Atomicity::Monatomic | Atomicity::Diatomic => 5.0,
            Atomicity::Triatomic | Atomicity::Tetratomic => 10.0,
        }
    }

    fn index(self) -> usize {
        self.chi() as usize - 1
    }
}

impl fmt::Display for Atomicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Atomicity::Monatomic => "monatomic",
            Atomicity::Diatomic => "diatomic",
            Atomicity::Triatomic => "triatomic",
            Atomicity::Tetratomic => "tetratomic",
        };
        write!(f, "{name} (chi = {})", self.chi())
    }
}

/// Errors raised by the gas-model layer.
#[derive(Debug, Clone, PartialEq)]
pub enum GasModelError {
    /// gamma = c^2 / T fell below the validated range of the closure.
    BelowValidatedRange { chi: u32, gamma: f64, minimum: f64 },
    /// The tetratomic closure denominator lost positivity.
    ClosureSingularity { gamma: f64 },
    /// Speeds at or above c have no Lorentz factor.
    Kinematics { speed: f64, c: f64 },
    /// A state variable outside the model domain.
    Domain { what: &'static str, value: f64 },
    /// Propagated special-function failure.
    Special(SpecialFnError),
}

impl fmt::Display for GasModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GasModelError::BelowValidatedRange {
                chi,
                gamma,
                minimum,
            } => write!(
                f,
                "gamma = {gamma} is below the validated closure range for chi = {chi} \
                 (minimum {minimum})"
            ),
            GasModelError::ClosureSingularity { gamma } => write!(
                f,
                "tetratomic closure denominator is not positive at gamma = {gamma}"
            ),
            GasModelError::Kinematics { speed, c } => {
                write!(f, "speed {speed} is not below the light speed {c}")
            }
            GasModelError::Domain { what, value } => {
                write!(f, "domain error: {what} = {value}")
            }
            GasModelError::Special(err) => write!(f, "special function failure: {err}"),
        }
    }
}

impl std::error::Error for GasModelError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            GasModelError::Special(err) => Some(err),
            _ => None,
        }
    }
}

impl From<SpecialFnError> for GasModelError {
    fn from(err: SpecialFnError) -> Self {
        GasModelError::Special(err)
    }
}

pub type Result<T> = std::result::Result<T, GasModelError>;

/// Closure factor and kinematics of one particle state, bundled because the
/// relativistic right-hand side needs all of them at once.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativisticClosure {
    /// gamma = c^2 / T.
    pub gamma: f64,
    /// Closure factor H(chi, gamma) > 1.
    pub h: f64,
    /// dH/dgamma at fixed chi.
    pub dh_dgamma: f64,
    /// Lorentz factor Gamma(v) >= 1.
    pub lorentz: f64,
    /// Momentum factor F = Gamma H (>= H since Gamma >= 1).
    pub momentum_factor: f64,
    /// Momentum w = F v, same dimension as v. Derived on demand, never state.
    pub w: Vec<f64>,
}

/// Pointwise thermodynamic state of the gas at density rho and temperature T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoState {
    /// p = rho T, exact at every gamma.
    pub pressure: f64,
    /// e = rho c^2 (H - 1/gamma) = rho (c^2 + internal_energy).
    pub energy_density: f64,
    /// epsilon = c^2 (H - 1 - 1/gamma), per unit mass; tends to the
    /// classical (2 chi + 1) T / 2 as gamma grows.
    pub internal_energy: f64,
}

/// Coefficients of the residual H - 1 - (2 chi + 3)/(2 gamma) in powers of
/// 1/gamma starting at gamma^{-2}, one row per chi. Obtained by dividing the
/// exact difference series of each closure numerator by its denominator
/// series; the tetratomic gamma^{-5} entry is not carried (its share of the
/// residual is below 1e-10 relative at the series switch).
const RESIDUAL_COEFFS: [[f64; 4]; 4] = [
    [15.0 / 8.0, -15.0 / 8.0, 135.0 / 128.0, 45.0 / 32.0],
    [3.0 / 8.0, -3.0 / 8.0, 63.0 / 128.0, -27.0 / 32.0],
    [-9.0 / 8.0, 33.0 / 8.0, -2601.0 / 128.0, 3933.0 / 32.0],
    [-21.0 / 8.0, 93.0 / 8.0, -9009.0 / 128.0, 0.0],
];

/// Above this the residual uses its series; below it the plain difference
/// H - 1 - (2 chi + 3)/(2 gamma) still holds at least six significant
/// digits, more than the downstream consumers ask of it.
const RESIDUAL_SWITCH: f64 = 1.0e4;

fn check_range(chi: Atomicity, gamma: f64) -> Result<()> {
    let minimum = chi.gamma_min();
    if !gamma.is_finite() || gamma < minimum {
        return Err(GasModelError::BelowValidatedRange {
            chi: chi.chi(),
            gamma,
            minimum,
        });
    }
    Ok(())
}

fn check_positive(what: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(GasModelError::Domain { what, value });
    }
    Ok(())
}

fn norm_squared(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// H - 1 from the scaled difference evaluators; every branch is a ratio of
/// same-normalization quantities, so the e^gamma scalings cancel exactly.
fn h_minus_one(chi: Atomicity, gamma: f64, policy: &EvalPolicy) -> Result<f64> {
    let inv = 1.0 / gamma;
    match chi {
        Atomicity::Monatomic => {
            // K_1/K_2 + 4/gamma, via K_1 - K_2 = (K_1 - K_0) - 2 K_1/gamma.
            let d10 = scaled_diff_k1_k0(gamma, policy)?;
            let s1 = bessel_k_scaled(1, gamma, policy)?;
            let s2 = bessel_k_scaled(2, gamma, policy)?;
            Ok((d10 - 2.0 * s1 * inv) / s2 + 4.0 * inv)
        }
        Atomicity::Diatomic => {
            // K_0/K_1 + 4/gamma.
            let d10 = scaled_diff_k1_k0(gamma, policy)?;
            let s1 = bessel_k_scaled(1, gamma, policy)?;
            Ok(4.0 * inv - d10 / s1)
        }
        Atomicity::Triatomic => {
            // K_1/(gamma I) + 3/gamma with I the K_1/y tail integral;
            // gamma I = K_1 - (K_1 - gamma I) keeps the denominator exact.
            let dj1 = scaled_k1_minus_gamma_tail(gamma, policy)?;
            let s1 = bessel_k_scaled(1, gamma, policy)?;
            Ok(dj1 / (s1 - dj1) + 3.0 * inv)
        }
        Atomicity::Tetratomic => {
            // K_0/(gamma K_0 - gamma^2 I) + 3/gamma. The denominator decays
            // through zero somewhere below gamma = 2; inside the validated
            // range it stays positive, and the guard keeps the failure mode
            // explicit rather than a sign flip.
            let dd0 = scaled_k0_minus_chi4_denom(gamma, policy)?;
            let ds = scaled_chi4_denom(gamma, policy)?;
            if !(ds > 0.0) {
                return Err(GasModelError::ClosureSingularity { gamma });
            }
            Ok(dd0 / ds + 3.0 * inv)
        }
    }
}

/// Residual H - 1 - (2 chi + 3)/(2 gamma), taking the already-computed
/// H - 1 so the plain-difference branch costs nothing extra.
fn residual(chi: Atomicity, gamma: f64, h1: f64) -> f64 {
    if gamma >= RESIDUAL_SWITCH {
        let c = &RESIDUAL_COEFFS[chi.index()];
        let inv = 1.0 / gamma;
        inv * inv * (c[0] + inv * (c[1] + inv * (c[2] + inv * c[3])))
    } else {
        h1 - f64::from(2 * chi.chi() + 3) / (2.0 * gamma)
    }
}

/// Closure factor H(chi, gamma) = 1 + (2 chi + 3)/(2 gamma) + O(gamma^{-2}).
pub fn h_factor(chi: Atomicity, gamma: f64, policy: &EvalPolicy) -> Result<f64> {
    check_range(chi, gamma)?;
    Ok(1.0 + h_minus_one(chi, gamma, policy)?)
}

/// dH/dgamma at fixed chi, from the closed derivative relations of the
/// underlying ratios (K_0' = -K_1, K_1' = -K_0 - K_1/gamma, the three-term
/// recurrence, and d/dgamma of the tail integral = -K_1(gamma)/gamma). Each
/// ratio rho satisfies a Riccati-type identity rho' = quadratic(rho,
/// 1/gamma) whose constant part cancels against the residual definition, so
/// the derivative is assembled purely from H - 1 and residuals and keeps
/// absolute accuracy ~gamma^{-2} * 1e-15 at every gamma. A finite-difference
/// or bracket form would lose a factor gamma^2 of that.
pub fn dh_dgamma(chi: Atomicity, gamma: f64, policy: &EvalPolicy) -> Result<f64> {
    check_range(chi, gamma)?;
    let inv = 1.0 / gamma;
    match chi {
        Atomicity::Monatomic => {
            // sigma = K_1/K_2 obeys sigma' = sigma^2 - 1 + 3 sigma/gamma;
            // with s = sigma - 1 this is 2r + s(s + 3/gamma) where
            // r = s + 3/(2 gamma) is the residual shifted to this branch.
            let h1 = h_minus_one(chi, gamma, policy)?;
            let r = residual(chi, gamma, h1);
            let s = h1 - 4.0 * inv;
            Ok(2.0 * r + s * (s + 3.0 * inv) - 4.0 * inv * inv)
        }
        Atomicity::Diatomic => {
            // rho = K_0/K_1 obeys rho' = rho^2 - 1 + rho/gamma.
            let h1 = h_minus_one(chi, gamma, policy)?;
            let r = residual(chi, gamma, h1);
            let q = h1 - 4.0 * inv;
            Ok(2.0 * r + q * (q + inv) - 4.0 * inv * inv)
        }
        Atomicity::Triatomic => {
            // tau = K_1/(gamma I) obeys tau' = tau (tau - K_0/K_1 - 2/gamma);
            // the bracket is exactly the residual difference r_3 - r_2.
            let h1_3 = h_minus_one(chi, gamma, policy)?;
            let r3 = residual(chi, gamma, h1_3);
            let h1_2 = h_minus_one(Atomicity::Diatomic, gamma, policy)?;
            let r2 = residual(Atomicity::Diatomic, gamma, h1_2);
            Ok((1.0 + r3 + 1.5 * inv) * (r3 - r2) - 3.0 * inv * inv)
        }
        Atomicity::Tetratomic => {
            // omega = K_0/(gamma K_0 - gamma^2 I) obeys
            // omega' = omega (omega - K_1/K_0 - 2/gamma); the bracket is
            // r_4 + (r_2 + q/(2 gamma))/(1 + q) with q = K_0/K_1 - 1.
            let h1_4 = h_minus_one(chi, gamma, policy)?;
            let r4 = residual(chi, gamma, h1_4);
            let h1_2 = h_minus_one(Atomicity::Diatomic, gamma, policy)?;
            let r2 = residual(Atomicity::Diatomic, gamma, h1_2);
            let q = h1_2 - 4.0 * inv;
            let y = r4 + (r2 + 0.5 * q * inv) / (1.0 + q);
            Ok((1.0 + r4 + 2.5 * inv) * y - 3.0 * inv * inv)
        }
    }
}

/// Lorentz factor of a velocity: 1/sqrt(1 - |v|^2/c^2), requiring |v| < c.
pub fn lorentz_gamma(v: &[f64], c: f64) -> Result<f64> {
    check_positive("light speed", c)?;
    let beta2 = norm_squared(v) / (c * c);
    if !(beta2 < 1.0) {
        return Err(GasModelError::Kinematics {
            speed: norm_squared(v).sqrt(),
            c,
        });
    }
    Ok(1.0 / (1.0 - beta2).sqrt())
}

/// Common preamble of the state-level operations.
struct Prepared {
    gamma: f64,
    lorentz: f64,
    h1: f64,
    c2: f64,
}

fn prepare(chi: Atomicity, t: f64, v: &[f64], c: f64, policy: &EvalPolicy) -> Result<Prepared> {
    check_positive("temperature", t)?;
    check_positive("light speed", c)?;
    let c2 = c * c;
    let gamma = c2 / t;
    check_range(chi, gamma)?;
    let lorentz = lorentz_gamma(v, c)?;
    let h1 = h_minus_one(chi, gamma, policy)?;
    Ok(Prepared {
        gamma,
        lorentz,
        h1,
        c2,
    })
}

/// Relativistic specific energy E = c^2 (Gamma H - 1 - 1/(gamma Gamma)),
/// assembled as Gamma c^2 (H - 1) + c^2 (Gamma - 1) - T/Gamma so nothing
/// cancels: the classical limit (2 chi + 1) T / 2 + |v|^2 / 2 emerges term
/// by term, with c^2 (Gamma - 1) = Gamma^2 |v|^2 / (Gamma + 1) exact.
pub fn relativistic_energy(
    chi: Atomicity,
    t: f64,
    v: &[f64],
    c: f64,
    policy: &EvalPolicy,
) -> Result<f64> {
    let p = prepare(chi, t, v, c, policy)?;
    let g = p.lorentz;
    let kinetic = g * g * norm_squared(v) / (g + 1.0);
    Ok(g * p.c2 * p.h1 + kinetic - t / g)
}

/// The bounded error term F = c^2 (E - E_classical): the gap between the
/// relativistic specific energy and (2 chi + 1) T / 2 + |w|^2 / 2, scaled by
/// c^2 so its limit as c grows is finite and nonzero. Assembled from the
/// residual of H and exact Gamma - 1 forms; the naive subtraction of O(c^2)
/// quantities would be pure roundoff beyond c ~ 1e4.
pub fn error_term_f(
    chi: Atomicity,
    t: f64,
    v: &[f64],
    c: f64,
    policy: &EvalPolicy,
) -> Result<f64> {
    let p = prepare(chi, t, v, c, policy)?;
    let r = residual(chi, p.gamma, p.h1);
    let g = p.lorentz;
    let v2 = norm_squared(v);
    let g2v2 = g * g * v2;
    let kin = g2v2 / (g + 1.0);
    let dof3 = f64::from(2 * chi.chi() + 3);
    let ch1 = p.c2 * p.h1;
    Ok(kin * (0.5 * dof3 * t + t / g) + g * p.c2 * (p.c2 * r)
        - g2v2 * (g2v2 / (2.0 * (g + 1.0) * (g + 1.0)) + ch1 * (2.0 + p.h1) / 2.0))
}

/// Pressure, energy density, and specific internal energy at (rho, T).
pub fn thermo_state(
    chi: Atomicity,
    rho: f64,
    t: f64,
    c: f64,
    policy: &EvalPolicy,
) -> Result<ThermoState> {
    check_positive("mass density", rho)?;
    check_positive("temperature", t)?;
    check_positive("light speed", c)?;
    let c2 = c * c;
    let gamma = c2 / t;
    check_range(chi, gamma)?;
    let h1 = h_minus_one(chi, gamma, policy)?;
    let internal_energy = c2 * h1 - t;
    Ok(ThermoState {
        pressure: rho * t,
        energy_density: rho * (c2 + internal_energy),
        internal_energy,
    })
}

/// Full closure bundle at a particle state (T, v).
pub fn relativistic_closure(
    chi: Atomicity,
    t: f64,
    v: &[f64],
    c: f64,
    policy: &EvalPolicy,
) -> Result<RelativisticClosure> {
    let p = prepare(chi, t, v, c, policy)?;
    let h = 1.0 + p.h1;
    let dh = dh_dgamma(chi, p.gamma, policy)?;
    let momentum_factor = p.lorentz * h;
    Ok(RelativisticClosure {
        gamma: p.gamma,
        h,
        dh_dgamma: dh,
        lorentz: p.lorentz,
        momentum_factor,
        w: v.iter().map(|x| momentum_factor * x).collect(),
    })
}

/// Speed |v| recovered from a momentum norm |w| = Gamma H |v| at fixed
/// temperature: mu = |w|/H equals Gamma |v|, and Gamma |v| inverts in closed
/// form to |v| = mu / sqrt(1 + mu^2/c^2).
pub fn speed_from_momentum(
    chi: Atomicity,
    t: f64,
    w_norm: f64,
    c: f64,
    policy: &EvalPolicy,
) -> Result<f64> {
    if !w_norm.is_finite() || w_norm < 0.0 {
        return Err(GasModelError::Domain {
            what: "momentum norm",
            value: w_norm,
        });
    }
    check_positive("temperature", t)?;
    check_positive("light speed", c)?;
    let gamma = c * c / t;
    check_range(chi, gamma)?;
    let h = 1.0 + h_minus_one(chi, gamma, policy)?;
    let mu = w_norm / h;
    Ok(mu / (1.0 + (mu / c) * (mu / c)).sqrt())
}
