//! Communication weights phi (velocity coupling) and zeta (temperature
//! coupling) in their three regimes: constant, a symmetric per-pair
//! perturbation of a constant, and distance-dependent mother functions.
//!
//! Shape invariants (square symmetric matrix, strictly increasing table,
//! positive parameters) are enforced at construction, so a `KernelSpec`
//! that exists is well-formed. `validate` does the semantic work on top:
//! positivity, monotonicity and a sampled Lipschitz bound over the relevant
//! domain, returning the min/max statistics the flocking estimates consume.

use std::fmt;

/// Which coupling a kernel drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelRole {
    Phi,
    Zeta,
}

impl fmt::Display for KernelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelRole::Phi => write!(f, "phi"),
            KernelRole::Zeta => write!(f, "zeta"),
        }
    }
}

/// Distance-dependent kernel families.
#[derive(Debug, Clone, PartialEq)]
pub enum MotherFunction {
    /// phi0 (1 + r^2)^{-beta}, strictly decreasing, Lipschitz on [0, inf).
    InversePower { phi0: f64, beta: f64 },
    /// phi0 max(0, 1 - r/radius): compactly supported, so positivity holds
    /// only while the relevant domain stays inside r < radius.
    Triangular { phi0: f64, radius: f64 },
}

impl MotherFunction {
    fn eval(&self, r: f64) -> f64 {
        match self {
            MotherFunction::InversePower { phi0, beta } => phi0 * (1.0 + r * r).powf(-beta),
            MotherFunction::Triangular { phi0, radius } => phi0 * (1.0 - r / radius).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelVariant {
    /// Same weight for every pair at every distance.
    Constant(f64),
    /// Per-pair weights ignoring distance; symmetric, near the base value.
    PerturbedMatrix { base: f64, matrix: Vec<Vec<f64>> },
    /// Weight as a function of separation distance.
    MotherFunction(MotherFunction),
    /// User-supplied samples, linearly interpolated inside the table and
    /// clamped to the endpoint values outside it.
    Tabulated { rs: Vec<f64>, values: Vec<f64> },
}

/// A communication kernel with its role tag.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub applies_to: KernelRole,
}

/// Min/max statistics of one kernel over its relevant domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    /// Largest weight over the domain.
    pub max: f64,
    /// Smallest weight: the value at the supplied domain bound when one is
    /// given, the sampled infimum otherwise.
    pub min: f64,
    /// max - min.
    pub spread: f64,
    /// Largest sampled difference quotient |f(r') - f(r)| / (r' - r); zero
    /// for the distance-independent variants.
    pub lipschitz: f64,
}

/// Combined statistics of a phi/zeta pair: phi-bar, phi-underbar, zeta-bar,
/// zeta-underbar, and the phi spread epsilon the perturbation estimates use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelStats {
    pub phi_max: f64,
    pub phi_min: f64,
    pub zeta_max: f64,
    pub zeta_min: f64,
    pub epsilon: f64,
}

/// Sampling controls for `validate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Largest relevant separation. Sampling covers [0, 2 * hint] and the
    /// reported minimum is the value at the hint itself. Without a hint the
    /// grid covers [0, 100].
    pub domain_hint: Option<f64>,
    /// Sampling step along r.
    pub grid_step: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            domain_hint: None,
            grid_step: 1e-2,
        }
    }
}

/// Validation range when no domain hint is supplied.
const DEFAULT_VALIDATION_RANGE: f64 = 100.0;

/// Errors raised by the kernel layer.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelError {
    /// A parameter or distance outside its domain.
    Domain { what: &'static str, value: f64 },
    /// Call-site misuse: bad indices, role mismatch, malformed shape.
    Usage(String),
    /// Matrix entry (a, b) disagrees with (b, a).
    NotSymmetric { a: usize, b: usize, ab: f64, ba: f64 },
    /// A weight sample that is not strictly positive, with its location.
    NonPositive { at: f64, value: f64 },
    /// An increasing pair of samples on an increasing distance pair.
    NonMonotone {
        r_low: f64,
        r_high: f64,
        value_low: f64,
        value_high: f64,
    },
    /// Malformed tabulated data (shape, ordering, parse failure).
    Table(String),
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelError::Domain { what, value } => write!(f, "domain error: {what} = {value}"),
            KernelError::Usage(msg) => write!(f, "usage error: {msg}"),
            KernelError::NotSymmetric { a, b, ab, ba } => write!(
                f,
                "matrix not symmetric: entry ({a}, {b}) = {ab} but ({b}, {a}) = {ba}"
            ),
            KernelError::NonPositive { at, value } => {
                write!(f, "kernel value {value} at r = {at} is not strictly positive")
            }
            KernelError::NonMonotone {
                r_low,
                r_high,
                value_low,
                value_high,
            } => write!(
                f,
                "kernel increases from {value_low} at r = {r_low} to {value_high} at r = {r_high}"
            ),
            KernelError::Table(msg) => write!(f, "tabulated kernel: {msg}"),
        }
    }
}

impl std::error::Error for KernelError {}

pub type Result<T> = std::result::Result<T, KernelError>;

fn check_parameter(what: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(KernelError::Domain { what, value });
    }
    Ok(())
}

impl KernelSpec {
    pub fn constant(value: f64, applies_to: KernelRole) -> Result<Self> {
        check_parameter("constant kernel value", value)?;
        Ok(KernelSpec {
            variant: KernelVariant::Constant(value),
            applies_to,
        })
    }

    pub fn inverse_power(phi0: f64, beta: f64, applies_to: KernelRole) -> Result<Self> {
        check_parameter("mother function amplitude", phi0)?;
        check_parameter("mother function exponent", beta)?;
        Ok(KernelSpec {
            variant: KernelVariant::MotherFunction(MotherFunction::InversePower { phi0, beta }),
            applies_to,
        })
    }

    pub fn triangular(phi0: f64, radius: f64, applies_to: KernelRole) -> Result<Self> {
        check_parameter("mother function amplitude", phi0)?;
        check_parameter("mother function radius", radius)?;
        Ok(KernelSpec {
            variant: KernelVariant::MotherFunction(MotherFunction::Triangular { phi0, radius }),
            applies_to,
        })
    }

    /// A symmetric per-pair weight matrix perturbing `base`.
    pub fn perturbed(base: f64, matrix: Vec<Vec<f64>>, applies_to: KernelRole) -> Result<Self> {
        check_parameter("perturbation base value", base)?;
        let n = matrix.len();
        if n == 0 {
            return Err(KernelError::Usage("perturbation matrix is empty".into()));
        }
        for (a, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(KernelError::Usage(format!(
                    "perturbation matrix row {a} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (b, &v) in row.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(KernelError::NonPositive { at: a as f64, value: v });
                }
                if matrix[b][a] != v {
                    return Err(KernelError::NotSymmetric {
                        a,
                        b,
                        ab: v,
                        ba: matrix[b][a],
                    });
                }
            }
        }
        Ok(KernelSpec {
            variant: KernelVariant::PerturbedMatrix { base, matrix },
            applies_to,
        })
    }

    /// Samples (r, value) with strictly increasing nonnegative r.
    pub fn tabulated(rs: Vec<f64>, values: Vec<f64>, applies_to: KernelRole) -> Result<Self> {
        if rs.is_empty() || rs.len() != values.len() {
            return Err(KernelError::Table(format!(
                "need matching nonempty columns, got {} distances and {} values",
                rs.len(),
                values.len()
            )));
        }
        for (i, &r) in rs.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(KernelError::Table(format!("row {i}: distance {r}")));
            }
            if i > 0 && r <= rs[i - 1] {
                return Err(KernelError::Table(format!(
                    "distances must be strictly increasing, row {i}: {} then {r}",
                    rs[i - 1]
                )));
            }
            let v = values[i];
            if !(v > 0.0) || !v.is_finite() {
                return Err(KernelError::NonPositive { at: r, value: v });
            }
        }
        Ok(KernelSpec {
            variant: KernelVariant::Tabulated { rs, values },
            applies_to,
        })
    }

    /// Parses a two-column CSV body `r,value` (blank lines and `#` comments
    /// skipped) into a tabulated kernel.
    pub fn tabulated_from_csv(text: &str, applies_to: KernelRole) -> Result<Self> {
        let mut rs = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',');
            let (r, v) = match (cols.next(), cols.next(), cols.next()) {
                (Some(r), Some(v), None) => (r.trim(), v.trim()),
                _ => {
                    return Err(KernelError::Table(format!(
                        "line {}: expected exactly two comma-separated columns",
                        lineno + 1
                    )))
                }
            };
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    KernelError::Table(format!("line {}: cannot parse `{s}` as a number", lineno + 1))
                })
            };
            rs.push(parse(r)?);
            values.push(parse(v)?);
        }
        KernelSpec::tabulated(rs, values, applies_to)
    }

    /// Weight of the pair (a, b) at separation r. Distance-independent
    /// variants ignore r (but still reject negative separations); function
    /// variants ignore the indices. Symmetric in (a, b) by construction.
    pub fn weight(&self, a: usize, b: usize, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(KernelError::Domain {
                what: "separation distance",
                value: r,
            });
        }
        match &self.variant {
            KernelVariant::Constant(v) => Ok(*v),
            KernelVariant::PerturbedMatrix { matrix, .. } => {
                let n = matrix.len();
                if a >= n || b >= n {
                    return Err(KernelError::Usage(format!(
                        "pair ({a}, {b}) outside the {n}x{n} weight matrix"
                    )));
                }
                Ok(matrix[a][b])
            }
            KernelVariant::MotherFunction(f) => Ok(f.eval(r)),
            KernelVariant::Tabulated { rs, values } => Ok(interpolate_clamped(rs, values, r)),
        }
    }

    /// Full semantic validation with default sampling.
    pub fn validate(&self) -> Result<KernelBounds> {
        self.validate_with(&ValidationOptions::default())
    }

    /// Checks strict positivity and monotone non-increase over the relevant
    /// domain, records the sampled Lipschitz bound, and returns the min/max
    /// statistics. Distance-independent variants validate their entries and
    /// ignore the sampling options.
    pub fn validate_with(&self, opts: &ValidationOptions) -> Result<KernelBounds> {
        match &self.variant {
            KernelVariant::Constant(v) => Ok(KernelBounds {
                max: *v,
                min: *v,
                spread: 0.0,
                lipschitz: 0.0,
            }),
            KernelVariant::PerturbedMatrix { matrix, .. } => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for row in matrix {
                    for &v in row {
                        min = min.min(v);
                        max = max.max(v);
                    }
                }
                Ok(KernelBounds {
                    max,
                    min,
                    spread: max - min,
                    lipschitz: 0.0,
                })
            }
            KernelVariant::MotherFunction(_) | KernelVariant::Tabulated { .. } => {
                self.validate_sampled(opts)
            }
        }
    }

    fn validate_sampled(&self, opts: &ValidationOptions) -> Result<KernelBounds> {
        if let Some(hint) = opts.domain_hint {
            check_parameter("validation domain hint", hint)?;
        }
        check_parameter("validation grid step", opts.grid_step)?;
        let r_max = match opts.domain_hint {
            Some(hint) => 2.0 * hint,
            None => DEFAULT_VALIDATION_RANGE,
        };

        // The sampling grid, with the table nodes merged in so coarse grids
        // cannot step over a tabulated violation.
        let steps = (r_max / opts.grid_step).ceil() as usize;
        let mut grid: Vec<f64> = (0..=steps)
            .map(|i| (i as f64 * opts.grid_step).min(r_max))
            .collect();
        if let KernelVariant::Tabulated { rs, .. } = &self.variant {
            grid.extend(rs.iter().copied().filter(|&r| r <= r_max));
            grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
            grid.dedup();
        }

        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut lipschitz: f64 = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for &r in &grid {
            let v = self.weight(0, 0, r)?;
            if !(v > 0.0) {
                return Err(KernelError::NonPositive { at: r, value: v });
            }
            min = min.min(v);
            max = max.max(v);
            if let Some((r0, v0)) = prev {
                if v > v0 {
                    return Err(KernelError::NonMonotone {
                        r_low: r0,
                        r_high: r,
                        value_low: v0,
                        value_high: v,
                    });
                }
                lipschitz = lipschitz.max((v0 - v).abs() / (r - r0));
            }
            prev = Some((r, v));
        }
        if let Some(hint) = opts.domain_hint {
            min = self.weight(0, 0, hint)?;
        }
        Ok(KernelBounds {
            max,
            min,
            spread: max - min,
            lipschitz,
        })
    }
}

impl KernelStats {
    /// Combined statistics of a phi/zeta pair; epsilon is phi's spread.
    pub fn from_specs(
        phi: &KernelSpec,
        zeta: &KernelSpec,
        opts: &ValidationOptions,
    ) -> Result<KernelStats> {
        if phi.applies_to != KernelRole::Phi {
            return Err(KernelError::Usage(format!(
                "expected a phi kernel, got one tagged {}",
                phi.applies_to
            )));
        }
        if zeta.applies_to != KernelRole::Zeta {
            return Err(KernelError::Usage(format!(
                "expected a zeta kernel, got one tagged {}",
                zeta.applies_to
            )));
        }
        let pb = phi.validate_with(opts)?;
        let zb = zeta.validate_with(opts)?;
        Ok(KernelStats {
            phi_max: pb.max,
            phi_min: pb.min,
            zeta_max: zb.max,
            zeta_min: zb.min,
            epsilon: pb.spread,
        })
    }
}

fn interpolate_clamped(rs: &[f64], values: &[f64], r: f64) -> f64 {
    if r <= rs[0] {
        return values[0];
    }
    if r >= rs[rs.len() - 1] {
        return values[values.len() - 1];
    }
    let hi = rs.partition_point(|&x| x < r);
    let (r0, r1) = (rs[hi - 1], rs[hi]);
    let (v0, v1) = (values[hi - 1], values[hi]);
    v0 + (v1 - v0) * (r - r0) / (r1 - r0)
}
