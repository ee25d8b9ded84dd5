//! Closure-layer contract: leading-order behavior of H, analytic vs
//! finite-difference derivatives, thermodynamic identities, Lorentz
//! kinematics, the bounded classical-gap term F, and the error taxonomy.

mod common;

use common::{fit_loglog_slope, log_grid};
use flock_core::gas_model::{
    dh_dgamma, error_term_f, h_factor, lorentz_gamma, relativistic_closure, relativistic_energy,
    speed_from_momentum, thermo_state, Atomicity, GasModelError,
};
use flock_core::special_functions::{bessel_k_scaled, tail_integral_k1_over_y_scaled, EvalPolicy};
use proptest::prelude::*;

fn pol() -> EvalPolicy {
    EvalPolicy::default()
}

/// Tightened policy for finite-difference probes: quadrature noise in the
/// values must sit far below the 1e-6 derivative-agreement target.
fn tight() -> EvalPolicy {
    EvalPolicy {
        abs_tol: 1e-15,
        rel_tol: 3e-14,
        max_quadrature_nodes: 200_000,
        ..EvalPolicy::default()
    }
}

fn rel_err(value: f64, reference: f64) -> f64 {
    ((value - reference) / reference).abs()
}

fn norm_squared(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// 2 chi + 3: the coefficient of 1/(2 gamma) in H - 1.
fn dof3(chi: Atomicity) -> f64 {
    f64::from(2 * chi.chi() + 3)
}

/// Leading residual coefficients, transcribed independently of the library
/// tables: (H - 1 - (2 chi + 3)/(2 gamma)) gamma^2 -> e2 + e3/gamma + ...
fn e2(chi: Atomicity) -> f64 {
    match chi {
        Atomicity::Monatomic => 15.0 / 8.0,
        Atomicity::Diatomic => 3.0 / 8.0,
        Atomicity::Triatomic => -9.0 / 8.0,
        Atomicity::Tetratomic => -21.0 / 8.0,
    }
}

fn e3(chi: Atomicity) -> f64 {
    match chi {
        Atomicity::Monatomic => -15.0 / 8.0,
        Atomicity::Diatomic => -3.0 / 8.0,
        Atomicity::Triatomic => 33.0 / 8.0,
        Atomicity::Tetratomic => 93.0 / 8.0,
    }
}

fn e4(chi: Atomicity) -> f64 {
    match chi {
        Atomicity::Monatomic => 135.0 / 128.0,
        Atomicity::Diatomic => 63.0 / 128.0,
        Atomicity::Triatomic => -2601.0 / 128.0,
        Atomicity::Tetratomic => -9009.0 / 128.0,
    }
}

fn central_fd(chi: Atomicity, gamma: f64, step: f64, policy: &EvalPolicy) -> f64 {
    let hi = h_factor(chi, gamma + step, policy).unwrap();
    let lo = h_factor(chi, gamma - step, policy).unwrap();
    (hi - lo) / (2.0 * step)
}

#[test]
fn h_factor_examples() {
    let p = pol();
    let h = h_factor(Atomicity::Monatomic, 1000.0, &p).unwrap();
    assert!(rel_err(h, 1.0025) <= 5e-6, "chi = 1: {h}");
    let h = h_factor(Atomicity::Triatomic, 1000.0, &p).unwrap();
    assert!(rel_err(h, 1.0045) <= 5e-6, "chi = 3: {h}");

    // Tetratomic at gamma = 200: leading order, and a raw assembly from the
    // public Bessel and tail values (whose own accuracy is value-level, so
    // the comparison is loose).
    let gamma = 200.0;
    let h = h_factor(Atomicity::Tetratomic, gamma, &p).unwrap();
    assert!((h - (1.0 + 11.0 / 400.0)).abs() <= 1e-3, "chi = 4: {h}");
    let k0 = bessel_k_scaled(0, gamma, &p).unwrap();
    let tail = tail_integral_k1_over_y_scaled(gamma, &p).unwrap();
    let raw = k0 / (gamma * k0 - gamma * gamma * tail) + 3.0 / gamma;
    assert!(rel_err(h, raw) <= 1e-3, "raw assembly {raw} vs {h}");
}

#[test]
fn h_expansion_slope_and_bound() {
    let p = pol();
    for chi in Atomicity::ALL {
        // Deviation from 1 + (2 chi + 3)/(2 gamma) decays like gamma^{-2}.
        let grid = log_grid(20.0, 1.0e4, 25);
        let devs: Vec<f64> = grid
            .iter()
            .map(|&g| {
                (h_factor(chi, g, &p).unwrap() - 1.0 - dof3(chi) / (2.0 * g)).abs()
            })
            .collect();
        let slope = fit_loglog_slope(&grid, &devs);
        assert!(
            (-2.1..=-1.9).contains(&slope),
            "{chi}: expansion deviation slope {slope}"
        );
        // Uniform remainder bound over the wider validated range.
        for &g in &log_grid(20.0, 1.0e6, 25) {
            let dev = (h_factor(chi, g, &p).unwrap() - 1.0 - dof3(chi) / (2.0 * g)).abs();
            assert!(
                dev * g * g <= 30.0,
                "{chi}: remainder {dev} at gamma = {g} exceeds 30/gamma^2"
            );
        }
    }
}

#[test]
fn dh_examples() {
    let p = tight();
    // Leading order -(2 chi + 3)/(2 gamma^2).
    let dh = dh_dgamma(Atomicity::Monatomic, 500.0, &p).unwrap();
    let lead = -5.0 / (2.0 * 500.0 * 500.0);
    assert!(rel_err(dh, lead) <= 0.2, "chi = 1 leading order: {dh}");

    // Central finite differences of h_factor.
    let dh = dh_dgamma(Atomicity::Diatomic, 10.0, &p).unwrap();
    let fd = central_fd(Atomicity::Diatomic, 10.0, 1e-4, &p);
    assert!(rel_err(dh, fd) <= 1e-6, "chi = 2 at 10: {dh} vs fd {fd}");

    let dh = dh_dgamma(Atomicity::Tetratomic, 50.0, &p).unwrap();
    let fd = central_fd(Atomicity::Tetratomic, 50.0, 0.015, &p);
    assert!(rel_err(dh, fd) <= 1e-6, "chi = 4 at 50: {dh} vs fd {fd}");
}

#[test]
fn dh_matches_finite_differences_on_grid() {
    let p = tight();
    for chi in Atomicity::ALL {
        let lo = chi.gamma_min() * 1.001;
        for &g in &log_grid(lo, 1.0e4, 24) {
            // Step ~3e-4 gamma balances truncation (~1e-7 relative) against
            // cancellation noise in the difference.
            let step = 3e-4 * g;
            let dh = dh_dgamma(chi, g, &p).unwrap();
            let fd = central_fd(chi, g, step, &p);
            assert!(
                rel_err(dh, fd) <= 1e-6,
                "{chi}: dH/dgamma {dh} vs finite difference {fd} at gamma = {g}"
            );
        }
    }
}

#[test]
fn residual_matches_plain_difference_through_f() {
    let p = pol();
    // At v = 0 the gap term is exactly Gamma c^4 (H - 1 - (2 chi + 3)/(2
    // gamma)) with Gamma = 1, so F/c^4 must reproduce the plainly-computed
    // residual. Above the residual's internal series switch this pits the
    // series coefficients against the difference-series assembly of H. The
    // plain side rounds H through 1 + h, an absolute floor of eps/2 that
    // the tolerance has to carry.
    for chi in Atomicity::ALL {
        for target in [2.0e4_f64, 1.0e5] {
            let c = target.sqrt();
            let gamma = c * c;
            let f = error_term_f(chi, 1.0, &[], c, &p).unwrap();
            let plain =
                h_factor(chi, gamma, &p).unwrap() - 1.0 - dof3(chi) / (2.0 * gamma);
            let floor = 2.4e-16 / plain.abs();
            assert!(
                rel_err(f / (c * c * c * c), plain) <= 2e-9 + floor,
                "{chi} at gamma = {gamma}: F/c^4 = {} vs plain residual {plain}",
                f / (c * c * c * c)
            );
        }
        // Both sides of the switch agree with the independently transcribed
        // leading coefficients; the tolerance covers the next two orders.
        for target in [9.0e3_f64, 9.9e3, 1.01e4, 1.1e4] {
            let c = target.sqrt();
            let gamma = c * c;
            let f = error_term_f(chi, 1.0, &[], c, &p).unwrap();
            let r = f / (c * c * c * c);
            let predicted = e2(chi) + e3(chi) / gamma;
            let tol = 3.0 * (e4(chi).abs() + 1.0) / (gamma * gamma);
            assert!(
                (r * gamma * gamma - predicted).abs() <= tol,
                "{chi} at gamma = {gamma}: residual*gamma^2 = {} vs {predicted}",
                r * gamma * gamma
            );
        }
    }
}

#[test]
fn thermo_state_identities() {
    let p = pol();
    // Pressure is rho T with no closure content at all: exact bits.
    for (chi, rho, t, c) in [
        (Atomicity::Monatomic, 0.73, 1.9, 55.0),
        (Atomicity::Diatomic, 2.5, 0.61, 200.0),
        (Atomicity::Triatomic, 1.0e-3, 3.3, 1.0e3),
        (Atomicity::Tetratomic, 40.0, 1.1, 1.0e4),
    ] {
        let st = thermo_state(chi, rho, t, c, &p).unwrap();
        assert_eq!(st.pressure, rho * t);
        assert_eq!(st.energy_density, rho * (c * c + st.internal_energy));
        let h = h_factor(chi, c * c / t, &p).unwrap();
        assert!(
            rel_err(st.energy_density, rho * c * c * (h - t / (c * c))) <= 1e-13,
            "{chi}: energy density identity"
        );
    }

    // Internal energy tends to (2 chi + 1) T / 2.
    let st = thermo_state(Atomicity::Monatomic, 1.0, 1.0, 100.0, &p).unwrap();
    assert!((st.internal_energy - 1.5).abs() <= 1e-3, "{}", st.internal_energy);
    let st = thermo_state(Atomicity::Diatomic, 1.0, 2.0, 1000.0, &p).unwrap();
    assert!((st.internal_energy - 5.0).abs() <= 1e-5, "{}", st.internal_energy);
}

#[test]
fn lorentz_examples() {
    assert_eq!(lorentz_gamma(&[], 1.0).unwrap(), 1.0);
    assert_eq!(lorentz_gamma(&[0.0, 0.0, 0.0], 3.0).unwrap(), 1.0);
    // |v| = 0.6 c.
    let g = lorentz_gamma(&[1.2, 0.0, 0.0], 2.0).unwrap();
    assert!((g - 1.25).abs() <= 1e-15, "{g}");
    // |v| = 0.1, c = 10.
    let g = lorentz_gamma(&[0.1, 0.0, 0.0], 10.0).unwrap();
    assert!(rel_err(g, 1.0 / (1.0_f64 - 1e-4).sqrt()) <= 1e-14, "{g}");
}

#[test]
fn energy_examples() {
    let p = pol();
    // Classical limit (2 chi + 1) T / 2 + |v|^2 / 2 at large c.
    let e = relativistic_energy(Atomicity::Monatomic, 1.0, &[0.6, 0.8, 0.0], 1.0e4, &p).unwrap();
    assert!((e - 2.0).abs() <= 1e-6, "chi = 1: {e}");
    let e = relativistic_energy(Atomicity::Tetratomic, 2.0, &[], 1.0e4, &p).unwrap();
    assert!((e - 9.0).abs() <= 1e-6, "chi = 4: {e}");

    // The gap to the classical value closes like c^{-2}.
    let cs = [50.0, 100.0, 200.0];
    let gaps: Vec<f64> = cs
        .iter()
        .map(|&c| {
            let e =
                relativistic_energy(Atomicity::Triatomic, 1.0, &[2.0, 0.0, 0.0], c, &p).unwrap();
            (e - (3.5 + 2.0)).abs()
        })
        .collect();
    let slope = fit_loglog_slope(&cs, &gaps);
    assert!((-2.1..=-1.9).contains(&slope), "classical-gap slope {slope}");
}

#[test]
fn energy_increases_with_temperature() {
    let p = pol();
    let v = [0.3, -1.1, 0.7];
    for chi in Atomicity::ALL {
        let mut last = f64::NEG_INFINITY;
        for i in 0..10 {
            let t = 0.5 + 0.5 * i as f64;
            let e = relativistic_energy(chi, t, &v, 30.0, &p).unwrap();
            assert!(e > last, "{chi}: energy not increasing at T = {t}");
            last = e;
        }
    }
}

#[test]
fn f_term_bounded_with_finite_limit() {
    let p = pol();
    let velocities: [&[f64]; 3] = [&[], &[0.8, 0.0, 0.0], &[1.0, -1.0, 0.5]];
    for chi in Atomicity::ALL {
        for t in [0.5, 2.3, 5.0] {
            for v in velocities {
                let fs: Vec<f64> = [1.0e2, 1.0e3, 1.0e4, 1.0e5]
                    .iter()
                    .map(|&c| error_term_f(chi, t, v, c, &p).unwrap())
                    .collect();
                for f in &fs {
                    assert!(f.abs() <= 500.0, "{chi}: |F| = {} unbounded", f.abs());
                }
                // Cauchy tail: the c -> infinity limit exists.
                let gap = (fs[2] - fs[3]).abs();
                assert!(
                    gap <= 1e-3 * (1.0 + fs[3].abs()),
                    "{chi}: F not settling, gap {gap}"
                );
            }
        }
    }

    // The v = 0 limit is the leading residual coefficient e2 * T^2.
    let f = error_term_f(Atomicity::Diatomic, 1.0, &[], 1.0e5, &p).unwrap();
    assert!((f - 0.375).abs() <= 1e-6, "{f}");
    for c in [1.0e2, 1.0e3, 1.0e4] {
        let f = error_term_f(Atomicity::Monatomic, 1.0, &[], c, &p).unwrap();
        assert!(rel_err(f, 15.0 / 8.0) <= 1e-3, "{f} at c = {c}");
    }

    // Richardson: halving c^{-2} quarters the distance to the limit.
    let f_at = |c: f64| error_term_f(Atomicity::Triatomic, 1.3, &[0.4, 0.2, 0.1], c, &p).unwrap();
    let ratio = (f_at(100.0) - f_at(200.0)) / (f_at(200.0) - f_at(400.0));
    assert!((3.2..=4.8).contains(&ratio), "Richardson ratio {ratio}");
}

#[test]
fn naive_assemblies_agree_at_moderate_c() {
    // At c = 50 the textbook forms Gamma H - 1 - 1/(gamma Gamma) still hold
    // ~9 digits, enough to cross-check the cancellation-free assemblies.
    let p = pol();
    let c = 50.0;
    let c2 = c * c;
    let velocities: [&[f64]; 2] = [&[], &[0.5, -0.3, 0.2]];
    for chi in Atomicity::ALL {
        for t in [0.8, 2.0] {
            for v in velocities {
                let gamma = c2 / t;
                let g = lorentz_gamma(v, c).unwrap();
                let h = h_factor(chi, gamma, &p).unwrap();
                let naive_e = c2 * (g * h - 1.0 - 1.0 / (gamma * g));
                let e = relativistic_energy(chi, t, v, c, &p).unwrap();
                assert!(
                    (naive_e - e).abs() <= 1e-10 * (1.0 + e.abs()),
                    "{chi}: energy {e} vs naive {naive_e}"
                );

                let w2 = norm_squared(v) * (g * h) * (g * h);
                let naive_f = c2
                    * (naive_e - chi.specific_heat() * t - 0.5 * w2);
                let f = error_term_f(chi, t, v, c, &p).unwrap();
                assert!(
                    (naive_f - f).abs() <= 1e-6 * (1.0 + f.abs()),
                    "{chi}: F {f} vs naive {naive_f}"
                );
            }
        }
    }
}

#[test]
fn closure_bundle_and_momentum_roundtrip() {
    let p = pol();
    let v = [0.9, -0.2, 0.4];
    let cl = relativistic_closure(Atomicity::Diatomic, 1.7, &v, 40.0, &p).unwrap();
    assert_eq!(cl.gamma, 40.0 * 40.0 / 1.7);
    assert!(cl.h > 1.0);
    assert!(cl.lorentz >= 1.0);
    assert_eq!(cl.momentum_factor, cl.lorentz * cl.h);
    assert!(cl.momentum_factor >= cl.h);
    assert!(cl.dh_dgamma < 0.0);
    for (wi, vi) in cl.w.iter().zip(v.iter()) {
        assert_eq!(*wi, cl.momentum_factor * vi);
    }

    // |w| = Gamma H |v| inverts back to |v|.
    let w_norm = norm_squared(&cl.w).sqrt();
    let speed = speed_from_momentum(Atomicity::Diatomic, 1.7, w_norm, 40.0, &p).unwrap();
    let v_norm = norm_squared(&v).sqrt();
    assert!(rel_err(speed, v_norm) <= 1e-12, "{speed} vs {v_norm}");
    assert_eq!(
        speed_from_momentum(Atomicity::Diatomic, 1.7, 0.0, 40.0, &p).unwrap(),
        0.0
    );

    // At rest the momentum factor degenerates to H exactly.
    let cl0 = relativistic_closure(Atomicity::Triatomic, 1.0, &[], 40.0, &p).unwrap();
    assert_eq!(cl0.lorentz, 1.0);
    assert_eq!(cl0.momentum_factor, cl0.h);
}

#[test]
fn error_taxonomy() {
    let p = pol();
    assert!(matches!(
        h_factor(Atomicity::Monatomic, 4.9, &p),
        Err(GasModelError::BelowValidatedRange { chi: 1, minimum, .. }) if minimum == 5.0
    ));
    assert!(matches!(
        h_factor(Atomicity::Triatomic, 9.9, &p),
        Err(GasModelError::BelowValidatedRange { chi: 3, minimum, .. }) if minimum == 10.0
    ));
    assert!(matches!(
        dh_dgamma(Atomicity::Tetratomic, 2.0, &p),
        Err(GasModelError::BelowValidatedRange { .. })
    ));
    assert!(matches!(
        h_factor(Atomicity::Diatomic, f64::NAN, &p),
        Err(GasModelError::BelowValidatedRange { .. })
    ));

    assert!(matches!(
        lorentz_gamma(&[3.0, 4.0], 5.0),
        Err(GasModelError::Kinematics { .. })
    ));
    assert!(matches!(
        lorentz_gamma(&[1.0], -2.0),
        Err(GasModelError::Domain { .. })
    ));

    assert!(matches!(
        thermo_state(Atomicity::Monatomic, 0.0, 1.0, 100.0, &p),
        Err(GasModelError::Domain { .. })
    ));
    assert!(matches!(
        thermo_state(Atomicity::Monatomic, 1.0, -1.0, 100.0, &p),
        Err(GasModelError::Domain { .. })
    ));
    // c = 2 puts gamma = 4 below the monatomic cutoff.
    assert!(matches!(
        relativistic_energy(Atomicity::Monatomic, 1.0, &[], 2.0, &p),
        Err(GasModelError::BelowValidatedRange { .. })
    ));
    assert!(matches!(
        speed_from_momentum(Atomicity::Monatomic, 1.0, -0.1, 100.0, &p),
        Err(GasModelError::Domain { .. })
    ));

    assert!(matches!(Atomicity::from_chi(0), Err(GasModelError::Domain { .. })));
    assert!(matches!(Atomicity::from_chi(5), Err(GasModelError::Domain { .. })));
    assert_eq!(Atomicity::from_chi(2).unwrap(), Atomicity::Diatomic);
    for chi in Atomicity::ALL {
        assert_eq!(chi.degrees_of_freedom(), 2 * chi.chi() + 1);
        assert_eq!(chi.specific_heat(), f64::from(2 * chi.chi() + 1) / 2.0);
        assert_eq!(Atomicity::from_chi(chi.chi()).unwrap(), chi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn closure_invariants_hold(
        idx in 0usize..4,
        frac in 0.0f64..1.0,
        vx in -0.9f64..0.9,
        vy in -0.9f64..0.9,
        vz in -0.9f64..0.9,
    ) {
        let chi = Atomicity::ALL[idx];
        let p = pol();
        let lo = chi.gamma_min() * 1.01;
        let gamma = lo * (1.0e6 / lo).powf(frac);

        let h = h_factor(chi, gamma, &p).unwrap();
        prop_assert!(h > 1.0, "{} at gamma = {}: H = {}", chi, gamma, h);

        if gamma >= 20.0 {
            let dev = (h - 1.0 - dof3(chi) / (2.0 * gamma)).abs();
            prop_assert!(dev * gamma * gamma <= 30.0);
            prop_assert!(dh_dgamma(chi, gamma, &p).unwrap() < 0.0);
        }

        // c^2 Gamma^2 - Gamma^2 |v|^2 = c^2 with c = 2 (so |v| < 1.56 < c).
        let v = [vx, vy, vz];
        let g = lorentz_gamma(&v, 2.0).unwrap();
        let identity = (4.0 * g * g - g * g * norm_squared(&v)) / 4.0;
        prop_assert!((identity - 1.0).abs() <= 1e-12);
    }
}
