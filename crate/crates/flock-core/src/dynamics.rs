//! Particle ensembles, right-hand sides for the four flocking models, and
//! time integration.
//!
//! The classical model evolves (x, v, T) directly. The relativistic models
//! are stated in conserved form (momentum and energy per particle); their
//! right-hand sides resolve to (dv, dT) through the 2x2 solve in
//! (d gamma/dt, d|v|^2/dt), where the momentum row is the projection of the
//! momentum equation onto v and the energy row is the exact chain rule of
//! the energy function. The vector part of dv divides by H Gamma^3, the
//! momentum equation's scalar coefficient after folding v (v . dv) into
//! (1 + Gamma^2 |v|^2 / c^2) dv = Gamma^2 dv.
//!
//! Pair sums accumulate one antisymmetric term per unordered pair in a fixed
//! order, so the discrete conservation laws hold to round-off and results
//! are bit-reproducible.

use std::fmt;

use crate::gas_model::{self, Atomicity, GasModelError};
use crate::kernels::{KernelError, KernelRole, KernelSpec};
use crate::special_functions::EvalPolicy;

/// Which flocking system the ensemble evolves under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    /// Classical thermodynamic model: dv from phi-weighted v/T differences,
    /// dT from the per-particle energy balance.
    ClassicalTCS,
    /// Relativistic model closed with the Synge-type factor H(chi, gamma).
    RTCSSynge,
    /// Relativistic model with the polynomial closure H = 1 + T/c^2 and
    /// energy Gamma T + c^2 (Gamma - 1); classical limit has c_V = 1.
    RTCSSimplified,
    /// Mechanical relativistic model: momentum Gamma v (1 + Gamma/c^2),
    /// plain velocity differences on the right, temperatures frozen.
    RelativisticCSMechanical,
}

impl Model {
    pub fn is_relativistic(self) -> bool {
        self != Model::ClassicalTCS
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Model::ClassicalTCS => "classical-tcs",
            Model::RTCSSynge => "rtcs-synge",
            Model::RTCSSimplified => "rtcs-simplified",
            Model::RelativisticCSMechanical => "rcs-mechanical",
        };
        write!(f, "{name}")
    }
}

/// Errors raised by right-hand sides, frame normalization, and integration.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    /// A state entry outside its domain (nonpositive temperature, ...).
    State {
        particle: usize,
        what: &'static str,
        value: f64,
    },
    /// The 2x2 closure solve lost its determinant.
    DegenerateClosure { particle: usize, determinant: f64 },
    /// Closure or kinematics failure at one particle.
    Gas {
        particle: usize,
        source: GasModelError,
    },
    Kernel(KernelError),
    Config(String),
    /// Step size collapsed below its floor under repeated rejection.
    Stiffness { t: f64, dt: f64 },
    /// The zero-momentum fixed point did not converge.
    Normalization { iterations: usize, residual: f64 },
    /// A derivative entry came out non-finite.
    NonFinite {
        particle: usize,
        what: &'static str,
    },
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::State {
                particle,
                what,
                value,
            } => write!(f, "particle {particle}: {what} = {value} is out of domain"),
            DynamicsError::DegenerateClosure {
                particle,
                determinant,
            } => write!(
                f,
                "particle {particle}: closure solve determinant {determinant} is degenerate"
            ),
            DynamicsError::Gas { particle, source } => {
                write!(f, "particle {particle}: {source}")
            }
            DynamicsError::Kernel(e) => write!(f, "kernel: {e}"),
            DynamicsError::Config(msg) => write!(f, "configuration: {msg}"),
            DynamicsError::Stiffness { t, dt } => write!(
                f,
                "step size {dt} at t = {t} fell below its floor under repeated rejection"
            ),
            DynamicsError::Normalization {
                iterations,
                residual,
            } => write!(
                f,
                "frame normalization stalled after {iterations} iterations, |sum w| = {residual}"
            ),
            DynamicsError::NonFinite { particle, what } => {
                write!(f, "particle {particle}: non-finite {what} derivative")
            }
        }
    }
}

impl std::error::Error for DynamicsError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            DynamicsError::Gas { source, .. } => Some(source),
            DynamicsError::Kernel(e) => Some(e),
            _ => None,
        }
    }
}

impl From<KernelError> for DynamicsError {
    fn from(e: KernelError) -> Self {
        DynamicsError::Kernel(e)
    }
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// One particle state set: positions, velocities, temperatures, and the
/// physical regime they evolve under. `c` is infinite for the classical
/// model and finite for the relativistic ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub x: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub temps: Vec<f64>,
    pub chi: Atomicity,
    pub c: f64,
    pub model: Model,
}

impl Ensemble {
    pub fn new(
        x: Vec<[f64; 3]>,
        v: Vec<[f64; 3]>,
        temps: Vec<f64>,
        chi: Atomicity,
        c: f64,
        model: Model,
    ) -> Result<Self> {
        let ens = Ensemble {
            x,
            v,
            temps,
            chi,
            c,
            model,
        };
        ens.validate()?;
        Ok(ens)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if n == 0 {
            return Err(DynamicsError::Config("ensemble is empty".into()));
        }
        if self.v.len() != n || self.temps.len() != n {
            return Err(DynamicsError::Config(format!(
                "mismatched lengths: {} positions, {} velocities, {} temperatures",
                n,
                self.v.len(),
                self.temps.len()
            )));
        }
        if self.model.is_relativistic() {
            if !self.c.is_finite() || self.c <= 0.0 {
                return Err(DynamicsError::Config(format!(
                    "relativistic model needs a finite positive light speed, got {}",
                    self.c
                )));
            }
        } else if !(self.c.is_infinite() && self.c > 0.0) {
            return Err(DynamicsError::Config(format!(
                "classical model uses the infinite light-speed sentinel, got {}",
                self.c
            )));
        }
        for a in 0..n {
            let t = self.temps[a];
            if !t.is_finite() || t <= 0.0 {
                return Err(DynamicsError::State {
                    particle: a,
                    what: "temperature",
                    value: t,
                });
            }
            for axis in 0..3 {
                if !self.x[a][axis].is_finite() || !self.v[a][axis].is_finite() {
                    return Err(DynamicsError::State {
                        particle: a,
                        what: "coordinate",
                        value: f64::NAN,
                    });
                }
            }
            if self.model.is_relativistic() {
                let speed = norm3(&self.v[a]);
                if !(speed < self.c) {
                    return Err(DynamicsError::Gas {
                        particle: a,
                        source: GasModelError::Kinematics { speed, c: self.c },
                    });
                }
            }
        }
        Ok(())
    }

    /// Scalar F with momentum w_a = F v_a under this ensemble's model.
    pub fn momentum_factor(&self, a: usize) -> Result<f64> {
        let v = self.v[a].as_slice();
        match self.model {
            Model::ClassicalTCS => Ok(1.0),
            Model::RTCSSynge => {
                let cl = gas_model::relativistic_closure(
                    self.chi,
                    self.temps[a],
                    v,
                    self.c,
                    &EvalPolicy::default(),
                )
                .map_err(|source| DynamicsError::Gas {
                    particle: a,
                    source,
                })?;
                Ok(cl.momentum_factor)
            }
            Model::RTCSSimplified => {
                let g = lorentz(self, a)?;
                Ok(g * (1.0 + self.temps[a] / (self.c * self.c)))
            }
            Model::RelativisticCSMechanical => {
                let g = lorentz(self, a)?;
                Ok(g * (1.0 + g / (self.c * self.c)))
            }
        }
    }

    /// Momentum vector w_a of one particle under this ensemble's model.
    pub fn momentum_vector(&self, a: usize) -> Result<[f64; 3]> {
        let f = self.momentum_factor(a)?;
        Ok(scale3(&self.v[a], f))
    }
}

/// Time derivative of an ensemble state.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub dx: Vec<[f64; 3]>,
    pub dv: Vec<[f64; 3]>,
    pub dtemp: Vec<f64>,
}

impl Derivative {
    fn zeros(n: usize) -> Self {
        Derivative {
            dx: vec![[0.0; 3]; n],
            dv: vec![[0.0; 3]; n],
            dtemp: vec![0.0; n],
        }
    }
}

/// Per-particle record of the relativistic closure solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtcsSolveDiagnostic {
    /// a1 b2 - a2 b1; leading order (2 chi + 1) T^2 / (4 c^2).
    pub determinant: f64,
    /// d|v|^2/dt from the solve.
    pub dv2_solved: f64,
    /// 2 v . dv assembled from the returned dv; matches dv2_solved.
    pub two_v_dot_dv: f64,
    /// d gamma/dt from the solve.
    pub dgamma: f64,
}

/// Relative determinant magnitude below which the closure solve is treated
/// as singular rather than divided through.
const DET_FLOOR: f64 = 1e-300;

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale3(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm3(&sub3(a, b))
}

fn lorentz(ens: &Ensemble, a: usize) -> Result<f64> {
    gas_model::lorentz_gamma(ens.v[a].as_slice(), ens.c).map_err(|source| DynamicsError::Gas {
        particle: a,
        source,
    })
}

fn check_temperatures(ens: &Ensemble) -> Result<()> {
    for (a, &t) in ens.temps.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 {
            return Err(DynamicsError::State {
                particle: a,
                what: "temperature",
                value: t,
            });
        }
    }
    Ok(())
}

/// Accumulates `term` into acc[a] and `-term` into acc[b].
fn accumulate_pair(acc: &mut [[f64; 3]], a: usize, b: usize, term: &[f64; 3]) {
    for axis in 0..3 {
        acc[a][axis] += term[axis];
        acc[b][axis] -= term[axis];
    }
}

/// Classical right-hand side: velocity alignment weighted by phi over v/T
/// differences, temperature relaxation weighted by zeta over 1/T
/// differences, coupled through the per-particle energy balance.
pub fn tcs_rhs(ens: &Ensemble, phi: &KernelSpec, zeta: &KernelSpec) -> Result<Derivative> {
    check_temperatures(ens)?;
    let n = ens.n();
    let mut d = Derivative {
        dx: ens.v.clone(),
        ..Derivative::zeros(n)
    };
    let mut zsum = vec![0.0; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let r = distance(&ens.x[a], &ens.x[b]);
            let p = phi.weight(a, b, r)? / n as f64;
            let term = [
                p * (ens.v[b][0] / ens.temps[b] - ens.v[a][0] / ens.temps[a]),
                p * (ens.v[b][1] / ens.temps[b] - ens.v[a][1] / ens.temps[a]),
                p * (ens.v[b][2] / ens.temps[b] - ens.v[a][2] / ens.temps[a]),
            ];
            accumulate_pair(&mut d.dv, a, b, &term);
            let z = zeta.weight(a, b, r)? / n as f64;
            let zterm = z * (1.0 / ens.temps[a] - 1.0 / ens.temps[b]);
            zsum[a] += zterm;
            zsum[b] -= zterm;
        }
    }
    let heat = 2.0 / f64::from(ens.chi.degrees_of_freedom());
    for a in 0..n {
        d.dtemp[a] = heat * (zsum[a] - dot3(&ens.v[a], &d.dv[a]));
    }
    Ok(d)
}

/// Pair sums of the relativistic models: S_mom over phi-weighted
/// Gamma v / T differences and S_en over zeta-weighted Gamma / T
/// differences, both accumulated antisymmetrically.
fn relativistic_pair_sums(
    ens: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
    lorentz: &[f64],
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let n = ens.n();
    let mut s_mom = vec![[0.0; 3]; n];
    let mut s_en = vec![0.0; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let r = distance(&ens.x[a], &ens.x[b]);
            let ga = lorentz[a] / ens.temps[a];
            let gb = lorentz[b] / ens.temps[b];
            let p = phi.weight(a, b, r)? / n as f64;
            let term = [
                p * (gb * ens.v[b][0] - ga * ens.v[a][0]),
                p * (gb * ens.v[b][1] - ga * ens.v[a][1]),
                p * (gb * ens.v[b][2] - ga * ens.v[a][2]),
            ];
            accumulate_pair(&mut s_mom, a, b, &term);
            let z = zeta.weight(a, b, r)? / n as f64;
            let zterm = z * (ga - gb);
            s_en[a] += zterm;
            s_en[b] -= zterm;
        }
    }
    Ok((s_mom, s_en))
}

fn solve_two_by_two(
    particle: usize,
    a1: f64,
    b1: f64,
    c1: f64,
    a2: f64,
    b2: f64,
    c2: f64,
) -> Result<(f64, f64, f64)> {
    let det = a1 * b2 - a2 * b1;
    let scale = (a1 * b2).abs() + (a2 * b1).abs();
    if det == 0.0 || det.abs() < DET_FLOOR * scale {
        return Err(DynamicsError::DegenerateClosure {
            particle,
            determinant: det,
        });
    }
    let dthermal = (c1 * b2 - c2 * b1) / det;
    let dv2 = (a1 * c2 - a2 * c1) / det;
    Ok((dthermal, dv2, det))
}

/// Right-hand side of the Synge-closed relativistic model, with the
/// per-particle solve records.
pub fn rtcs_rhs_with_diagnostics(
    ens: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
) -> Result<(Derivative, Vec<RtcsSolveDiagnostic>)> {
    let n = ens.n();
    let policy = EvalPolicy::default();
    let closures: Vec<gas_model::RelativisticClosure> = (0..n)
        .map(|a| {
            gas_model::relativistic_closure(
                ens.chi,
                ens.temps[a],
                ens.v[a].as_slice(),
                ens.c,
                &policy,
            )
            .map_err(|source| DynamicsError::Gas {
                particle: a,
                source,
            })
        })
        .collect::<Result<_>>()?;
    let lorentz: Vec<f64> = closures.iter().map(|cl| cl.lorentz).collect();
    let (s_mom, s_en) = relativistic_pair_sums(ens, phi, zeta, &lorentz)?;

    let c2l = ens.c * ens.c;
    let mut d = Derivative {
        dx: ens.v.clone(),
        ..Derivative::zeros(n)
    };
    let mut diags = Vec::with_capacity(n);
    for a in 0..n {
        let cl = &closures[a];
        let g = cl.lorentz;
        let v2 = dot3(&ens.v[a], &ens.v[a]);
        let a1 = g * v2 * cl.dh_dgamma;
        let b1 = 0.5 * cl.h * g * g * g;
        let c1 = dot3(&s_mom[a], &ens.v[a]);
        let a2 = c2l * (g * cl.dh_dgamma + 1.0 / (g * cl.gamma * cl.gamma));
        let b2 = 0.5 * g * (g * g * cl.h + 1.0 / cl.gamma);
        let (dgamma, dv2, det) = solve_two_by_two(a, a1, b1, c1, a2, b2, s_en[a])?;
        let t = ens.temps[a];
        d.dtemp[a] = -(t * t / c2l) * dgamma;
        let denom = cl.h * g * g * g;
        let drift = g * cl.dh_dgamma * dgamma;
        d.dv[a] = [
            (s_mom[a][0] - ens.v[a][0] * drift) / denom,
            (s_mom[a][1] - ens.v[a][1] * drift) / denom,
            (s_mom[a][2] - ens.v[a][2] * drift) / denom,
        ];
        diags.push(RtcsSolveDiagnostic {
            determinant: det,
            dv2_solved: dv2,
            two_v_dot_dv: 2.0 * dot3(&ens.v[a], &d.dv[a]),
            dgamma,
        });
    }
    Ok((d, diags))
}

/// Right-hand side of the Synge-closed relativistic model.
pub fn rtcs_rhs(ens: &Ensemble, phi: &KernelSpec, zeta: &KernelSpec) -> Result<Derivative> {
    rtcs_rhs_with_diagnostics(ens, phi, zeta).map(|(d, _)| d)
}

/// Right-hand side of the simplified relativistic model: the same pair sums
/// resolved with H = 1 + T/c^2 and energy Gamma T + c^2 (Gamma - 1), whose
/// T and |v|^2 partials are polynomial.
pub fn rtcs_simplified_rhs(
    ens: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
) -> Result<Derivative> {
    check_temperatures(ens)?;
    let n = ens.n();
    let lorentz: Vec<f64> = (0..n).map(|a| lorentz(ens, a)).collect::<Result<_>>()?;
    let (s_mom, s_en) = relativistic_pair_sums(ens, phi, zeta, &lorentz)?;

    let c2l = ens.c * ens.c;
    let mut d = Derivative {
        dx: ens.v.clone(),
        ..Derivative::zeros(n)
    };
    for a in 0..n {
        let g = lorentz[a];
        let t = ens.temps[a];
        let hs = 1.0 + t / c2l;
        let v2 = dot3(&ens.v[a], &ens.v[a]);
        // Rows in (dT/dt, d|v|^2/dt): the v-projected momentum equation and
        // the exact energy chain rule.
        let a1 = g * v2 / c2l;
        let b1 = 0.5 * hs * g * g * g;
        let c1 = dot3(&s_mom[a], &ens.v[a]);
        let a2 = g;
        let b2 = (t + c2l) * g * g * g / (2.0 * c2l);
        let (dt, _dv2, _det) = solve_two_by_two(a, a1, b1, c1, a2, b2, s_en[a])?;
        d.dtemp[a] = dt;
        let denom = hs * g * g * g;
        let drift = g * dt / c2l;
        d.dv[a] = [
            (s_mom[a][0] - ens.v[a][0] * drift) / denom,
            (s_mom[a][1] - ens.v[a][1] * drift) / denom,
            (s_mom[a][2] - ens.v[a][2] * drift) / denom,
        ];
    }
    Ok(d)
}

/// Right-hand side of the mechanical relativistic model: momentum
/// Gamma v (1 + Gamma/c^2) driven by plain velocity differences, solved for
/// dv by projecting onto v first; temperatures do not move.
pub fn rcs_mechanical_rhs(ens: &Ensemble, phi: &KernelSpec) -> Result<Derivative> {
    let n = ens.n();
    let mut s = vec![[0.0; 3]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let r = distance(&ens.x[a], &ens.x[b]);
            let p = phi.weight(a, b, r)? / n as f64;
            let term = scale3(&sub3(&ens.v[b], &ens.v[a]), p);
            accumulate_pair(&mut s, a, b, &term);
        }
    }
    let c2l = ens.c * ens.c;
    let mut d = Derivative {
        dx: ens.v.clone(),
        ..Derivative::zeros(n)
    };
    for a in 0..n {
        let g = lorentz(ens, a)?;
        let coeff_dv = g * (1.0 + g / c2l);
        let coeff_vdv = (g * g * g / c2l) * (1.0 + 2.0 * g / c2l);
        let v2 = dot3(&ens.v[a], &ens.v[a]);
        let v_dot_dv = dot3(&s[a], &ens.v[a]) / (coeff_dv + coeff_vdv * v2);
        d.dv[a] = [
            (s[a][0] - coeff_vdv * v_dot_dv * ens.v[a][0]) / coeff_dv,
            (s[a][1] - coeff_vdv * v_dot_dv * ens.v[a][1]) / coeff_dv,
            (s[a][2] - coeff_vdv * v_dot_dv * ens.v[a][2]) / coeff_dv,
        ];
    }
    Ok(d)
}

/// Model-dispatched right-hand side with a finiteness check on the result.
pub fn rhs(ens: &Ensemble, phi: &KernelSpec, zeta: &KernelSpec) -> Result<Derivative> {
    let d = match ens.model {
        Model::ClassicalTCS => tcs_rhs(ens, phi, zeta)?,
        Model::RTCSSynge => rtcs_rhs(ens, phi, zeta)?,
        Model::RTCSSimplified => rtcs_simplified_rhs(ens, phi, zeta)?,
        Model::RelativisticCSMechanical => rcs_mechanical_rhs(ens, phi)?,
    };
    for a in 0..ens.n() {
        if !d.dtemp[a].is_finite() {
            return Err(DynamicsError::NonFinite {
                particle: a,
                what: "temperature",
            });
        }
        for axis in 0..3 {
            if !d.dv[a][axis].is_finite() || !d.dx[a][axis].is_finite() {
                return Err(DynamicsError::NonFinite {
                    particle: a,
                    what: "velocity",
                });
            }
        }
    }
    Ok(d)
}

/// Shifts velocities so the model's total momentum vanishes: exactly for
/// the classical model (mean subtraction, repeated until the sum is zero),
/// by a fixed point on the shift vector for the relativistic ones, stopping
/// at |sum w| < 1e-12 N.
pub fn normalize_frame(ens: &Ensemble) -> Result<Ensemble> {
    ens.validate()?;
    let mut out = ens.clone();
    let n = out.n();
    if !out.model.is_relativistic() {
        for _ in 0..8 {
            let mut mean = [0.0; 3];
            for v in &out.v {
                for axis in 0..3 {
                    mean[axis] += v[axis];
                }
            }
            if mean == [0.0; 3] {
                break;
            }
            for axis in 0..3 {
                mean[axis] /= n as f64;
            }
            for v in &mut out.v {
                for axis in 0..3 {
                    v[axis] -= mean[axis];
                }
            }
        }
        return Ok(out);
    }

    let target = 1e-12 * n as f64;
    let max_iterations = 200;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let mut total = [0.0; 3];
        let mut slope = 0.0;
        for a in 0..n {
            let f = out.momentum_factor(a)?;
            slope += f;
            for axis in 0..3 {
                total[axis] += f * out.v[a][axis];
            }
        }
        residual = norm3(&total);
        if residual < target {
            return Ok(out);
        }
        let mut shift = scale3(&total, 1.0 / slope);
        // Halve the shift while it would push any particle to |v| >= c.
        'damping: for _ in 0..60 {
            for a in 0..n {
                let trial = sub3(&out.v[a], &shift);
                if !(norm3(&trial) < out.c * (1.0 - 1e-12)) {
                    shift = scale3(&shift, 0.5);
                    continue 'damping;
                }
            }
            break;
        }
        for a in 0..n {
            out.v[a] = sub3(&out.v[a], &shift);
        }
    }
    Err(DynamicsError::Normalization {
        iterations: max_iterations,
        residual,
    })
}

/// Integration scheme selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Rk4Fixed {
        dt: f64,
    },
    Rk45Adaptive {
        rtol: f64,
        atol: f64,
        dt_min: f64,
        dt_max: f64,
    },
}

/// Time-integration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub t_end: f64,
    /// Observer cadence in accepted steps.
    pub sample_stride: usize,
    /// Steps landing at or below this temperature are rejected and halved.
    pub t_floor: f64,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, t_end: f64) -> Self {
        IntegratorConfig {
            scheme: Scheme::Rk4Fixed { dt },
            t_end,
            sample_stride: 1,
            t_floor: 1e-8,
        }
    }

    pub fn rk45(t_end: f64) -> Self {
        IntegratorConfig {
            scheme: Scheme::Rk45Adaptive {
                rtol: 1e-8,
                atol: 1e-10,
                dt_min: 1e-12,
                dt_max: 0.1,
            },
            t_end,
            sample_stride: 1,
            t_floor: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DynamicsError::Config(msg));
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end = {} must be positive finite", self.t_end));
        }
        if self.sample_stride == 0 {
            return bad("sample_stride must be at least 1".into());
        }
        if !(self.t_floor >= 0.0) || !self.t_floor.is_finite() {
            return bad(format!("t_floor = {} must be nonnegative", self.t_floor));
        }
        match self.scheme {
            Scheme::Rk4Fixed { dt } => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return bad(format!("dt = {dt} must be positive finite"));
                }
            }
            Scheme::Rk45Adaptive {
                rtol,
                atol,
                dt_min,
                dt_max,
            } => {
                for (name, value) in [("rtol", rtol), ("atol", atol), ("dt_min", dt_min)] {
                    if !(value > 0.0) || !value.is_finite() {
                        return bad(format!("{name} = {value} must be positive finite"));
                    }
                }
                if !(dt_max >= dt_min) || !dt_max.is_finite() {
                    return bad(format!(
                        "dt_max = {dt_max} must be finite and at least dt_min = {dt_min}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationOutcome {
    Completed,
    /// The run stopped early; the observer saw the trajectory up to here.
    Halted { at_time: f64, error: DynamicsError },
}

/// Final state and step statistics of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationReport {
    pub t_final: f64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evaluations: u64,
    pub outcome: IntegrationOutcome,
    pub final_state: Ensemble,
}

/// Base state plus weighted derivative increments.
fn advance_state(base: &Ensemble, parts: &[(f64, &Derivative)]) -> Ensemble {
    let mut out = base.clone();
    for &(w, d) in parts {
        for a in 0..out.n() {
            for axis in 0..3 {
                out.x[a][axis] += w * d.dx[a][axis];
                out.v[a][axis] += w * d.dv[a][axis];
            }
            out.temps[a] += w * d.dtemp[a];
        }
    }
    out
}

fn state_is_acceptable(ens: &Ensemble, t_floor: f64) -> bool {
    ens.temps.iter().all(|&t| t.is_finite() && t > t_floor)
        && ens
            .v
            .iter()
            .chain(ens.x.iter())
            .all(|p| p.iter().all(|x| x.is_finite()))
}

/// Step failure split: errors at the accepted base state cannot improve
/// under refinement; errors in trial stages are retried at smaller steps.
enum StepError {
    Fatal(DynamicsError),
    Reject(DynamicsError),
}

struct Counters {
    accepted: u64,
    rejected: u64,
    evals: u64,
}

fn try_rk4(
    state: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
    h: f64,
    t_floor: f64,
    counters: &mut Counters,
) -> std::result::Result<Ensemble, StepError> {
    let mut eval = |ens: &Ensemble, fatal: bool| {
        counters.evals += 1;
        rhs(ens, phi, zeta).map_err(|e| {
            if fatal {
                StepError::Fatal(e)
            } else {
                StepError::Reject(e)
            }
        })
    };
    let k1 = eval(state, true)?;
    let k2 = eval(&advance_state(state, &[(0.5 * h, &k1)]), false)?;
    let k3 = eval(&advance_state(state, &[(0.5 * h, &k2)]), false)?;
    let k4 = eval(&advance_state(state, &[(h, &k3)]), false)?;
    let next = advance_state(
        state,
        &[
            (h / 6.0, &k1),
            (h / 3.0, &k2),
            (h / 3.0, &k3),
            (h / 6.0, &k4),
        ],
    );
    if !state_is_acceptable(&next, t_floor) {
        return Err(StepError::Reject(DynamicsError::State {
            particle: 0,
            what: "temperature floor",
            value: t_floor,
        }));
    }
    Ok(next)
}

/// One classical fourth-order step with no rejection logic.
pub fn rk4_step(ens: &Ensemble, phi: &KernelSpec, zeta: &KernelSpec, dt: f64) -> Result<Ensemble> {
    let mut counters = Counters {
        accepted: 0,
        rejected: 0,
        evals: 0,
    };
    try_rk4(ens, phi, zeta, dt, f64::NEG_INFINITY, &mut counters).map_err(|e| match e {
        StepError::Fatal(e) | StepError::Reject(e) => e,
    })
}

const MAX_HALVING_DEPTH: u32 = 40;

fn rk4_advance(
    state: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
    h: f64,
    t: f64,
    t_floor: f64,
    depth: u32,
    counters: &mut Counters,
) -> Result<Ensemble> {
    match try_rk4(state, phi, zeta, h, t_floor, counters) {
        Ok(next) => Ok(next),
        Err(StepError::Fatal(e)) => Err(e),
        Err(StepError::Reject(_)) if depth < MAX_HALVING_DEPTH => {
            counters.rejected += 1;
            let mid = rk4_advance(state, phi, zeta, 0.5 * h, t, t_floor, depth + 1, counters)?;
            rk4_advance(
                &mid,
                phi,
                zeta,
                0.5 * h,
                t + 0.5 * h,
                t_floor,
                depth + 1,
                counters,
            )
        }
        Err(StepError::Reject(_)) => Err(DynamicsError::Stiffness { t, dt: h }),
    }
}

// Fifth-order coefficients of the Dormand-Prince 5(4) pair.
const DP_A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

// Difference between the fifth- and fourth-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn rk45_error_norm(old: &Ensemble, new: &Ensemble, ks: &[Derivative], h: f64, rtol: f64, atol: f64) -> f64 {
    let n = old.n();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut add = |e: f64, y0: f64, y1: f64| {
        let scale = atol + rtol * y0.abs().max(y1.abs());
        sum += (e / scale) * (e / scale);
        count += 1;
    };
    for a in 0..n {
        for axis in 0..3 {
            let ex: f64 = (0..7).map(|i| DP_E[i] * ks[i].dx[a][axis]).sum();
            add(h * ex, old.x[a][axis], new.x[a][axis]);
            let ev: f64 = (0..7).map(|i| DP_E[i] * ks[i].dv[a][axis]).sum();
            add(h * ev, old.v[a][axis], new.v[a][axis]);
        }
        let et: f64 = (0..7).map(|i| DP_E[i] * ks[i].dtemp[a]).sum();
        add(h * et, old.temps[a], new.temps[a]);
    }
    (sum / count as f64).sqrt()
}

/// Advances the ensemble to t_end, invoking the observer at t = 0, after
/// every `sample_stride`-th accepted step, and at the final accepted state.
/// Steps that would drive a temperature to the floor are rejected and
/// retried smaller. An unrecoverable error halts the run and is reported
/// with its time stamp; the trajectory seen by the observer is kept.
pub fn integrate(
    ens: &Ensemble,
    phi: &KernelSpec,
    zeta: &KernelSpec,
    cfg: &IntegratorConfig,
    mut observer: impl FnMut(f64, &Ensemble),
) -> Result<IntegrationReport> {
    cfg.validate()?;
    ens.validate()?;
    if phi.applies_to != KernelRole::Phi {
        return Err(DynamicsError::Config(
            "velocity kernel is not tagged phi".into(),
        ));
    }
    if ens.model != Model::RelativisticCSMechanical && zeta.applies_to != KernelRole::Zeta {
        return Err(DynamicsError::Config(
            "temperature kernel is not tagged zeta".into(),
        ));
    }

    let mut state = ens.clone();
    let mut t = 0.0;
    let mut counters = Counters {
        accepted: 0,
        rejected: 0,
        evals: 0,
    };
    observer(t, &state);
    let mut last_emitted = t;
    let mut failure: Option<(f64, DynamicsError)> = None;

    match cfg.scheme {
        Scheme::Rk4Fixed { dt } => {
            while t < cfg.t_end {
                let h = dt.min(cfg.t_end - t);
                if h < dt * 1e-12 {
                    break;
                }
                match rk4_advance(&state, phi, zeta, h, t, cfg.t_floor, 0, &mut counters) {
                    Ok(next) => {
                        state = next;
                        t += h;
                        counters.accepted += 1;
                        if counters.accepted % cfg.sample_stride as u64 == 0 {
                            observer(t, &state);
                            last_emitted = t;
                        }
                    }
                    Err(e) => {
                        failure = Some((t, e));
                        break;
                    }
                }
            }
        }
        Scheme::Rk45Adaptive {
            rtol,
            atol,
            dt_min,
            dt_max,
        } => {
            let mut h = (cfg.t_end / 100.0).clamp(dt_min, dt_max);
            'time: while t < cfg.t_end && (cfg.t_end - t) > cfg.t_end * 1e-15 {
                h = h.min(cfg.t_end - t);
                // Stages; an error at the base state is fatal, later ones
                // reject the step.
                let mut ks: Vec<Derivative> = Vec::with_capacity(7);
                counters.evals += 1;
                match rhs(&state, phi, zeta) {
                    Ok(k1) => ks.push(k1),
                    Err(e) => {
                        failure = Some((t, e));
                        break 'time;
                    }
                }
                let mut rejected_stage = false;
                for stage in 0..6 {
                    let parts: Vec<(f64, &Derivative)> = (0..=stage)
                        .map(|i| (h * DP_A[stage][i], &ks[i]))
                        .filter(|&(w, _)| w != 0.0)
                        .collect();
                    let trial = advance_state(&state, &parts);
                    counters.evals += 1;
                    match rhs(&trial, phi, zeta) {
                        Ok(k) => ks.push(k),
                        Err(_) => {
                            rejected_stage = true;
                            break;
                        }
                    }
                }
                let mut accept = false;
                let mut err_norm = f64::INFINITY;
                let mut candidate = None;
                if !rejected_stage {
                    // ks[6] is the derivative at the fifth-order result.
                    let parts: Vec<(f64, &Derivative)> = (0..6)
                        .map(|i| (h * DP_A[5][i], &ks[i]))
                        .filter(|&(w, _)| w != 0.0)
                        .collect();
                    let next = advance_state(&state, &parts);
                    if state_is_acceptable(&next, cfg.t_floor) {
                        counters.evals += 1;
                        match rhs(&next, phi, zeta) {
                            Ok(k7) => {
                                ks.push(k7);
                                err_norm = rk45_error_norm(&state, &next, &ks, h, rtol, atol);
                                accept = err_norm <= 1.0;
                                candidate = Some(next);
                            }
                            Err(_) => {}
                        }
                    }
                }
                if accept {
                    state = candidate.unwrap();
                    t += h;
                    counters.accepted += 1;
                    if counters.accepted % cfg.sample_stride as u64 == 0 {
                        observer(t, &state);
                        last_emitted = t;
                    }
                    let factor = if err_norm > 0.0 {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    h = (h * factor).min(dt_max);
                } else {
                    counters.rejected += 1;
                    let factor = if err_norm.is_finite() && err_norm > 0.0 {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.2, 0.9)
                    } else {
                        0.5
                    };
                    h *= factor;
                    if h < dt_min {
                        failure = Some((t, DynamicsError::Stiffness { t, dt: h }));
                        break 'time;
                    }
                }
            }
        }
    }

    if last_emitted != t {
        observer(t, &state);
    }
    let outcome = match failure {
        Some((at_time, error)) => IntegrationOutcome::Halted { at_time, error },
        None => IntegrationOutcome::Completed,
    };
    Ok(IntegrationReport {
        t_final: t,
        steps_accepted: counters.accepted,
        steps_rejected: counters.rejected,
        rhs_evaluations: counters.evals,
        outcome,
        final_state: state,
    })
}
