use flock_core::dynamics::{
    integrate, normalize_frame, rcs_mechanical_rhs, rhs, rk4_step, rtcs_rhs,
    rtcs_rhs_with_diagnostics, rtcs_simplified_rhs, tcs_rhs, DynamicsError, Ensemble,
    IntegrationOutcome, IntegratorConfig, Model,
};
use flock_core::gas_model::Atomicity;
use flock_core::kernels::{KernelRole, KernelSpec};
use proptest::prelude::*;

fn k_phi(value: f64) -> KernelSpec {
    KernelSpec::constant(value, KernelRole::Phi).unwrap()
}

fn k_zeta(value: f64) -> KernelSpec {
    KernelSpec::constant(value, KernelRole::Zeta).unwrap()
}

fn classical(x: Vec<[f64; 3]>, v: Vec<[f64; 3]>, temps: Vec<f64>, chi: Atomicity) -> Ensemble {
    Ensemble::new(x, v, temps, chi, f64::INFINITY, Model::ClassicalTCS).unwrap()
}

fn relativistic(
    model: Model,
    chi: Atomicity,
    c: f64,
    x: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    temps: Vec<f64>,
) -> Ensemble {
    Ensemble::new(x, v, temps, chi, c, model).unwrap()
}

fn lcg(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (*state >> 11) as f64 / (1u64 << 53) as f64
}

fn sum3(vs: &[[f64; 3]]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for v in vs {
        for axis in 0..3 {
            out[axis] += v[axis];
        }
    }
    out
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Four-particle irregular state reused across the relativistic checks.
fn irregular_state(scale_v: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<f64>) {
    let x = vec![
        [0.0, 0.0, 0.0],
        [1.3, -0.4, 0.2],
        [-0.7, 0.9, -1.1],
        [0.5, 1.8, 0.6],
    ];
    let v: Vec<[f64; 3]> = [
        [0.31, -0.12, 0.07],
        [-0.22, 0.18, -0.29],
        [0.05, -0.33, 0.14],
        [-0.17, 0.26, 0.09],
    ]
    .iter()
    .map(|u| [u[0] * scale_v, u[1] * scale_v, u[2] * scale_v])
    .collect();
    let temps = vec![0.8, 1.4, 1.1, 0.6];
    (x, v, temps)
}

#[test]
fn tcs_head_on_pair() {
    let ens = classical(
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        vec![1.0, 1.0],
        Atomicity::Monatomic,
    );
    let d = tcs_rhs(&ens, &k_phi(1.0), &k_zeta(1.0)).unwrap();
    assert_eq!(d.dv[0], [-1.0, 0.0, 0.0]);
    assert_eq!(d.dv[1], [1.0, 0.0, 0.0]);
    assert_eq!(d.dx, ens.v);
}

#[test]
fn tcs_consensus_is_a_fixed_point() {
    let v = [0.4, -0.2, 0.1];
    let ens = classical(
        vec![[0.0; 3], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]],
        vec![v, v, v],
        vec![1.7, 1.7, 1.7],
        Atomicity::Triatomic,
    );
    let d = tcs_rhs(&ens, &k_phi(2.0), &k_zeta(0.5)).unwrap();
    for a in 0..3 {
        assert_eq!(d.dv[a], [0.0; 3]);
        assert_eq!(d.dtemp[a], 0.0);
    }
}

#[test]
fn tcs_conserves_momentum_and_energy_at_rhs_level() {
    let x = vec![[0.0; 3], [1.0, 0.5, -0.3], [-0.8, 1.2, 0.4]];
    let v = vec![[0.9, -0.4, 0.2], [-0.5, 0.7, -0.1], [0.3, -0.6, 0.8]];
    let temps = vec![0.7, 1.9, 1.2];
    let phi = KernelSpec::inverse_power(1.5, 0.8, KernelRole::Phi).unwrap();
    let zeta = k_zeta(0.9);
    for chi in Atomicity::ALL {
        let ens = classical(x.clone(), v.clone(), temps.clone(), chi);
        let d = tcs_rhs(&ens, &phi, &zeta).unwrap();
        let dv_scale: f64 = d.dv.iter().map(norm3).fold(0.0, f64::max);
        assert!(norm3(&sum3(&d.dv)) <= 1e-15 * dv_scale.max(1.0));
        let cv = f64::from(chi.degrees_of_freedom()) / 2.0;
        let rate: f64 = (0..3)
            .map(|a| cv * d.dtemp[a] + dot3(&ens.v[a], &d.dv[a]))
            .sum();
        assert!(rate.abs() <= 1e-14);
    }
}

#[test]
fn tcs_entropy_identity_holds() {
    let x = vec![[0.0; 3], [0.9, 0.1, 0.0], [0.2, -1.1, 0.7], [-0.5, 0.4, 1.3]];
    let v = vec![
        [0.6, -0.2, 0.1],
        [-0.3, 0.5, -0.4],
        [0.2, 0.1, 0.3],
        [-0.5, -0.4, 0.0],
    ];
    let temps = vec![0.5, 2.1, 1.3, 0.9];
    let phi = KernelSpec::inverse_power(1.2, 0.6, KernelRole::Phi).unwrap();
    let zeta = KernelSpec::inverse_power(0.8, 0.4, KernelRole::Zeta).unwrap();
    let ens = classical(x.clone(), v.clone(), temps.clone(), Atomicity::Diatomic);
    let d = tcs_rhs(&ens, &phi, &zeta).unwrap();

    let cv = f64::from(ens.chi.degrees_of_freedom()) / 2.0;
    let state_rate: f64 = (0..4).map(|a| cv * d.dtemp[a] / temps[a]).sum();

    let n = 4.0;
    let mut kernel_rate = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            if a == b {
                continue;
            }
            let r = norm3(&[x[a][0] - x[b][0], x[a][1] - x[b][1], x[a][2] - x[b][2]]);
            let diff = [
                v[b][0] / temps[b] - v[a][0] / temps[a],
                v[b][1] / temps[b] - v[a][1] / temps[a],
                v[b][2] / temps[b] - v[a][2] / temps[a],
            ];
            kernel_rate += phi.weight(a, b, r).unwrap() * dot3(&diff, &diff) / (2.0 * n);
            let tdiff = 1.0 / temps[a] - 1.0 / temps[b];
            kernel_rate += zeta.weight(a, b, r).unwrap() * tdiff * tdiff / (2.0 * n);
        }
    }
    assert!(kernel_rate >= 0.0);
    assert!((state_rate - kernel_rate).abs() <= 1e-12 * kernel_rate);
}

#[test]
fn rtcs_equilibrium_is_a_fixed_point() {
    let ens = relativistic(
        Model::RTCSSynge,
        Atomicity::Diatomic,
        100.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0.0; 3]; 3],
        vec![1.3, 1.3, 1.3],
    );
    let d = rtcs_rhs(&ens, &k_phi(1.0), &k_zeta(1.0)).unwrap();
    for a in 0..3 {
        assert_eq!(d.dv[a], [0.0; 3]);
        assert_eq!(d.dtemp[a], 0.0);
    }
}

#[test]
fn rtcs_antisymmetric_pair_is_symmetric_and_conservative() {
    let ens = relativistic(
        Model::RTCSSynge,
        Atomicity::Monatomic,
        100.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[2.0, -1.0, 0.5], [-2.0, 1.0, -0.5]],
        vec![1.0, 1.0],
    );
    let (d, diags) = rtcs_rhs_with_diagnostics(&ens, &k_phi(1.0), &k_zeta(1.0)).unwrap();
    assert_eq!(d.dtemp[0], d.dtemp[1]);

    // Momentum rate assembled the way the model resolves it:
    // H Gamma^3 dv + Gamma v (dH/dgamma) (dgamma/dt) per particle.
    let mut total = [0.0; 3];
    let mut scale: f64 = 0.0;
    for a in 0..2 {
        let cl = flock_core::gas_model::relativistic_closure(
            ens.chi,
            ens.temps[a],
            ens.v[a].as_slice(),
            ens.c,
            &Default::default(),
        )
        .unwrap();
        let g = cl.lorentz;
        for axis in 0..3 {
            let rate = cl.h * g * g * g * d.dv[a][axis]
                + g * ens.v[a][axis] * cl.dh_dgamma * diags[a].dgamma;
            total[axis] += rate;
            scale = scale.max(rate.abs());
        }
    }
    assert!(norm3(&total) <= 1e-13 * scale.max(1.0));

    for diag in &diags {
        let rel = (diag.two_v_dot_dv - diag.dv2_solved).abs()
            / diag.dv2_solved.abs().max(1e-300);
        assert!(rel <= 1e-10, "consistency defect {rel}");
    }
}

#[test]
fn rtcs_matches_classical_at_large_c() {
    let (x, v, temps) = irregular_state(1.0);
    let phi = k_phi(1.0);
    let zeta = k_zeta(0.7);
    for chi in [Atomicity::Monatomic, Atomicity::Triatomic] {
        let rel = relativistic(
            Model::RTCSSynge,
            chi,
            1.0e3,
            x.clone(),
            v.clone(),
            temps.clone(),
        );
        let cls = classical(x.clone(), v.clone(), temps.clone(), chi);
        let dr = rtcs_rhs(&rel, &phi, &zeta).unwrap();
        let dc = tcs_rhs(&cls, &phi, &zeta).unwrap();
        for a in 0..4 {
            for axis in 0..3 {
                let want = dc.dv[a][axis];
                assert!(
                    (dr.dv[a][axis] - want).abs() <= 1e-5 * (1.0 + want.abs()),
                    "chi {chi} dv mismatch: {} vs {want}",
                    dr.dv[a][axis]
                );
            }
            let want = dc.dtemp[a];
            assert!(
                (dr.dtemp[a] - want).abs() <= 1e-5 * (1.0 + want.abs()),
                "chi {chi} dT mismatch: {} vs {want}",
                dr.dtemp[a]
            );
        }
    }
}

#[test]
fn rtcs_determinant_matches_leading_scale() {
    let c = 1.0e3;
    let phi = k_phi(1.0);
    let zeta = k_zeta(1.0);
    let mut seed = 0x5eed_f10c_u64;
    for chi in Atomicity::ALL {
        for _ in 0..100 {
            let n = 3;
            let mut x = Vec::new();
            let mut v = Vec::new();
            let mut temps = Vec::new();
            for _ in 0..n {
                x.push([lcg(&mut seed) * 4.0, lcg(&mut seed) * 4.0, lcg(&mut seed) * 4.0]);
                v.push([
                    (lcg(&mut seed) - 0.5) * 0.8,
                    (lcg(&mut seed) - 0.5) * 0.8,
                    (lcg(&mut seed) - 0.5) * 0.8,
                ]);
                temps.push(0.5 + 1.5 * lcg(&mut seed));
            }
            let ens = relativistic(Model::RTCSSynge, chi, c, x, v, temps.clone());
            let (_, diags) = rtcs_rhs_with_diagnostics(&ens, &phi, &zeta).unwrap();
            for (a, diag) in diags.iter().enumerate() {
                let lead =
                    f64::from(ens.chi.degrees_of_freedom()) * temps[a] * temps[a] / (4.0 * c * c);
                let ratio = diag.determinant.abs() / lead;
                assert!(
                    (0.9..=1.1).contains(&ratio),
                    "chi {chi} det ratio {ratio}"
                );
                let rel = (diag.two_v_dot_dv - diag.dv2_solved).abs()
                    / diag.dv2_solved.abs().max(1e-300);
                assert!(rel <= 1e-10);
            }
        }
    }
}

#[test]
fn rtcs_rejects_out_of_range_states() {
    // gamma = c^2 / T below the validated closure range.
    let ens = relativistic(
        Model::RTCSSynge,
        Atomicity::Monatomic,
        10.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[0.0; 3], [0.0; 3]],
        vec![50.0, 50.0],
    );
    match rtcs_rhs(&ens, &k_phi(1.0), &k_zeta(1.0)) {
        Err(DynamicsError::Gas { .. }) => {}
        other => panic!("expected a gas-model error, got {other:?}"),
    }

    // Superluminal ensembles cannot be constructed.
    assert!(Ensemble::new(
        vec![[0.0; 3]],
        vec![[20.0, 0.0, 0.0]],
        vec![1.0],
        Atomicity::Monatomic,
        10.0,
        Model::RTCSSynge,
    )
    .is_err());

    // Nonpositive classical temperature is a state error.
    let mut bad = classical(
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]],
        vec![1.0, 1.0],
        Atomicity::Monatomic,
    );
    bad.temps[1] = -0.5;
    match tcs_rhs(&bad, &k_phi(1.0), &k_zeta(1.0)) {
        Err(DynamicsError::State { particle: 1, .. }) => {}
        other => panic!("expected a state error, got {other:?}"),
    }
}

#[test]
fn simplified_equilibrium_and_pair_conservation() {
    let v = [0.3, 0.1, -0.2];
    let eq = relativistic(
        Model::RTCSSimplified,
        Atomicity::Monatomic,
        50.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![v, v],
        vec![0.9, 0.9],
    );
    let d = rtcs_simplified_rhs(&eq, &k_phi(1.0), &k_zeta(1.0)).unwrap();
    for a in 0..2 {
        assert_eq!(d.dv[a], [0.0; 3]);
        assert_eq!(d.dtemp[a], 0.0);
    }

    let pair = relativistic(
        Model::RTCSSimplified,
        Atomicity::Monatomic,
        40.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[3.0, -2.0, 1.0], [-3.0, 2.0, -1.0]],
        vec![1.2, 1.2],
    );
    let d = rtcs_simplified_rhs(&pair, &k_phi(1.3), &k_zeta(0.6)).unwrap();
    let c2 = pair.c * pair.c;
    let mut total = [0.0; 3];
    let mut scale: f64 = 0.0;
    for a in 0..2 {
        let g = 1.0 / (1.0 - dot3(&pair.v[a], &pair.v[a]) / c2).sqrt();
        let hs = 1.0 + pair.temps[a] / c2;
        for axis in 0..3 {
            let rate = hs * g * g * g * d.dv[a][axis] + g * pair.v[a][axis] * d.dtemp[a] / c2;
            total[axis] += rate;
            scale = scale.max(rate.abs());
        }
    }
    assert!(norm3(&total) <= 1e-13 * scale.max(1.0));
}

#[test]
fn simplified_matches_unit_heat_capacity_classical_limit() {
    let (x, v, temps) = irregular_state(1.0);
    let c = 1.0e4;
    let phi = k_phi(1.1);
    let zeta = k_zeta(0.8);
    let ens = relativistic(
        Model::RTCSSimplified,
        Atomicity::Monatomic,
        c,
        x.clone(),
        v.clone(),
        temps.clone(),
    );
    let d = rtcs_simplified_rhs(&ens, &phi, &zeta).unwrap();

    // Classical oracle with c_V = 1: dv as in the thermodynamic model,
    // dT = zeta sum - v . dv.
    let n = 4.0;
    for a in 0..4 {
        let mut dv = [0.0; 3];
        let mut zsum = 0.0;
        for b in 0..4 {
            if b == a {
                continue;
            }
            let r = norm3(&[x[a][0] - x[b][0], x[a][1] - x[b][1], x[a][2] - x[b][2]]);
            let p = phi.weight(a, b, r).unwrap() / n;
            for axis in 0..3 {
                dv[axis] += p * (v[b][axis] / temps[b] - v[a][axis] / temps[a]);
            }
            zsum += zeta.weight(a, b, r).unwrap() / n * (1.0 / temps[a] - 1.0 / temps[b]);
        }
        let dt = zsum - dot3(&v[a], &dv);
        for axis in 0..3 {
            assert!((d.dv[a][axis] - dv[axis]).abs() <= 1e-6 * (1.0 + dv[axis].abs()));
        }
        assert!((d.dtemp[a] - dt).abs() <= 1e-6 * (1.0 + dt.abs()));
    }
}

#[test]
fn mechanical_examples() {
    let v = [0.4, -0.1, 0.2];
    let eq = relativistic(
        Model::RelativisticCSMechanical,
        Atomicity::Monatomic,
        30.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![v, v],
        vec![1.0, 1.0],
    );
    let d = rcs_mechanical_rhs(&eq, &k_phi(1.0)).unwrap();
    assert_eq!(d.dv[0], [0.0; 3]);
    assert_eq!(d.dtemp, vec![0.0, 0.0]);

    // Head-on pair: dv is antiparallel to v.
    let u = 2.5;
    let pair = relativistic(
        Model::RelativisticCSMechanical,
        Atomicity::Monatomic,
        30.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[u, 0.0, 0.0], [-u, 0.0, 0.0]],
        vec![1.0, 1.0],
    );
    let d = rcs_mechanical_rhs(&pair, &k_phi(1.0)).unwrap();
    assert!(d.dv[0][0] < 0.0);
    assert_eq!(d.dv[0][1], 0.0);
    assert_eq!(d.dv[0][2], 0.0);

    // Large c recovers plain velocity alignment.
    let (x, v, temps) = irregular_state(1.0);
    let ens = relativistic(
        Model::RelativisticCSMechanical,
        Atomicity::Monatomic,
        1.0e4,
        x.clone(),
        v.clone(),
        temps,
    );
    let phi = k_phi(0.9);
    let d = rcs_mechanical_rhs(&ens, &phi).unwrap();
    for a in 0..4 {
        let mut wanted = [0.0; 3];
        for b in 0..4 {
            if b == a {
                continue;
            }
            let r = norm3(&[x[a][0] - x[b][0], x[a][1] - x[b][1], x[a][2] - x[b][2]]);
            let p = phi.weight(a, b, r).unwrap() / 4.0;
            for axis in 0..3 {
                wanted[axis] += p * (v[b][axis] - v[a][axis]);
            }
        }
        for axis in 0..3 {
            assert!((d.dv[a][axis] - wanted[axis]).abs() <= 1e-6 * (1.0 + wanted[axis].abs()));
        }
    }
}

#[test]
fn normalize_frame_classical() {
    let zero_mean = classical(
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[0.5, -0.25, 0.0], [-0.5, 0.25, 0.0]],
        vec![1.0, 1.2],
        Atomicity::Monatomic,
    );
    let out = normalize_frame(&zero_mean).unwrap();
    assert_eq!(out.v, zero_mean.v);

    let drift = [0.3, -0.7, 0.45];
    let mut drifting = zero_mean.clone();
    for v in &mut drifting.v {
        for axis in 0..3 {
            v[axis] += drift[axis];
        }
    }
    let out = normalize_frame(&drifting).unwrap();
    let total = sum3(&out.v);
    assert!(norm3(&total) <= 1e-15);
    for a in 0..2 {
        for axis in 0..3 {
            assert!((out.v[a][axis] - zero_mean.v[a][axis]).abs() <= 1e-15);
        }
    }
}

#[test]
fn normalize_frame_relativistic() {
    let (x, v, temps) = irregular_state(3.0);
    for model in [
        Model::RTCSSynge,
        Model::RTCSSimplified,
        Model::RelativisticCSMechanical,
    ] {
        let ens = relativistic(
            model,
            Atomicity::Diatomic,
            60.0,
            x.clone(),
            v.clone(),
            temps.clone(),
        );
        let out = normalize_frame(&ens).unwrap();
        let mut total = [0.0; 3];
        for a in 0..out.n() {
            let w = out.momentum_vector(a).unwrap();
            for axis in 0..3 {
                total[axis] += w[axis];
            }
        }
        assert!(
            norm3(&total) < 1e-12 * out.n() as f64,
            "model {model}: residual {}",
            norm3(&total)
        );
        // Positions and temperatures are untouched.
        assert_eq!(out.x, ens.x);
        assert_eq!(out.temps, ens.temps);
    }
}

#[test]
fn integrate_holds_fixed_point_exactly() {
    let ens = classical(
        vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
        vec![[0.0; 3]; 3],
        vec![1.5, 1.5, 1.5],
        Atomicity::Tetratomic,
    );
    let cfg = IntegratorConfig::rk4(1e-3, 10.0);
    let mut constant = true;
    let report = integrate(&ens, &k_phi(1.0), &k_zeta(1.0), &cfg, |_, state| {
        constant &= state.v == ens.v && state.temps == ens.temps && state.x == ens.x;
    })
    .unwrap();
    assert_eq!(report.outcome, IntegrationOutcome::Completed);
    assert!(constant);
    assert_eq!(report.final_state.x, ens.x);
}

#[test]
fn integrate_conserves_classical_energy() {
    let mut seed = 77_u64;
    let n = 8;
    let mut x = Vec::new();
    let mut v = Vec::new();
    let mut temps = Vec::new();
    for _ in 0..n {
        x.push([lcg(&mut seed) * 2.0, lcg(&mut seed) * 2.0, lcg(&mut seed) * 2.0]);
        v.push([
            lcg(&mut seed) - 0.5,
            lcg(&mut seed) - 0.5,
            lcg(&mut seed) - 0.5,
        ]);
        temps.push(0.6 + lcg(&mut seed));
    }
    let ens = classical(x, v, temps, Atomicity::Monatomic);
    let cv = f64::from(ens.chi.degrees_of_freedom()) / 2.0;
    let energy = |state: &Ensemble| -> f64 {
        (0..n)
            .map(|a| cv * state.temps[a] + 0.5 * dot3(&state.v[a], &state.v[a]))
            .sum()
    };
    let e0 = energy(&ens);
    let mut worst: f64 = 0.0;
    let mut cfg = IntegratorConfig::rk4(1e-3, 20.0);
    cfg.sample_stride = 100;
    let report = integrate(&ens, &k_phi(1.0), &k_zeta(1.0), &cfg, |_, state| {
        worst = worst.max(((energy(state) - e0) / e0).abs());
    })
    .unwrap();
    assert_eq!(report.outcome, IntegrationOutcome::Completed);
    assert!(worst < 1e-8, "energy drift {worst}");
}

#[test]
fn integrate_schemes_agree() {
    let (x, v, temps) = irregular_state(1.0);
    let ens = classical(x, v, temps, Atomicity::Diatomic);
    let phi = k_phi(1.0);
    let zeta = k_zeta(0.8);
    let fixed = integrate(
        &ens,
        &phi,
        &zeta,
        &IntegratorConfig::rk4(1e-3, 2.0),
        |_, _| {},
    )
    .unwrap();
    let adaptive = integrate(&ens, &phi, &zeta, &IntegratorConfig::rk45(2.0), |_, _| {}).unwrap();
    assert_eq!(adaptive.outcome, IntegrationOutcome::Completed);
    assert!(adaptive.steps_accepted < fixed.steps_accepted);
    let (rtol, atol) = (1e-8, 1e-10);
    let a = &fixed.final_state;
    let b = &adaptive.final_state;
    for i in 0..ens.n() {
        for axis in 0..3 {
            let tol = 10.0 * (atol + rtol * a.x[i][axis].abs().max(b.x[i][axis].abs()));
            assert!((a.x[i][axis] - b.x[i][axis]).abs() <= tol);
            let tol = 10.0 * (atol + rtol * a.v[i][axis].abs().max(b.v[i][axis].abs()));
            assert!((a.v[i][axis] - b.v[i][axis]).abs() <= tol);
        }
        let tol = 10.0 * (atol + rtol * a.temps[i].abs().max(b.temps[i].abs()));
        assert!((a.temps[i] - b.temps[i]).abs() <= tol);
    }
}

#[test]
fn integrate_reports_base_state_failure() {
    // gamma = c^2/T = 2 sits below the validated closure range, so the very
    // first right-hand side evaluation fails and the run halts at t = 0.
    let ens = relativistic(
        Model::RTCSSynge,
        Atomicity::Monatomic,
        10.0,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]],
        vec![50.0, 50.0],
    );
    let mut samples = 0;
    let report = integrate(
        &ens,
        &k_phi(1.0),
        &k_zeta(1.0),
        &IntegratorConfig::rk4(1e-3, 1.0),
        |_, _| samples += 1,
    )
    .unwrap();
    match report.outcome {
        IntegrationOutcome::Halted { at_time, error } => {
            assert_eq!(at_time, 0.0);
            assert!(matches!(error, DynamicsError::Gas { .. }));
        }
        other => panic!("expected a halt, got {other:?}"),
    }
    assert_eq!(report.steps_accepted, 0);
    assert_eq!(samples, 1);
    assert_eq!(report.final_state, ens);
}

#[test]
fn integrate_reports_stiffness_when_floor_unreachable() {
    let ens = classical(
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]],
        vec![1.0, 1.0],
        Atomicity::Monatomic,
    );
    // A floor above the actual temperatures rejects every candidate step.
    let mut cfg = IntegratorConfig::rk4(1e-2, 1.0);
    cfg.t_floor = 2.0;
    let report = integrate(&ens, &k_phi(1.0), &k_zeta(1.0), &cfg, |_, _| {}).unwrap();
    match report.outcome {
        IntegrationOutcome::Halted { error, .. } => {
            assert!(matches!(error, DynamicsError::Stiffness { .. }));
        }
        other => panic!("expected stiffness, got {other:?}"),
    }
    assert!(report.steps_rejected > 0);

    let mut cfg = IntegratorConfig::rk45(1.0);
    cfg.t_floor = 2.0;
    let report = integrate(&ens, &k_phi(1.0), &k_zeta(1.0), &cfg, |_, _| {}).unwrap();
    assert!(matches!(
        report.outcome,
        IntegrationOutcome::Halted {
            error: DynamicsError::Stiffness { .. },
            ..
        }
    ));
}

#[test]
fn integrate_is_reproducible_and_samples_on_stride() {
    let (x, v, temps) = irregular_state(1.0);
    let ens = relativistic(Model::RTCSSynge, Atomicity::Diatomic, 1.0e3, x, v, temps);
    let phi = k_phi(1.0);
    let zeta = k_zeta(1.0);
    let mut cfg = IntegratorConfig::rk4(1e-3, 1.0);
    cfg.sample_stride = 100;
    let mut times = Vec::new();
    let first = integrate(&ens, &phi, &zeta, &cfg, |t, _| times.push(t)).unwrap();
    let second = integrate(&ens, &phi, &zeta, &cfg, |_, _| {}).unwrap();
    assert_eq!(first.final_state, second.final_state);
    assert_eq!(first.steps_accepted, 1000);
    // t = 0 plus every hundredth step; the last stride lands on t_end.
    assert_eq!(times.len(), 11);
    assert_eq!(times[0], 0.0);
    assert!((times[10] - 1.0).abs() < 1e-12);
}

#[test]
fn rk4_step_reverses_to_round_off() {
    let (x, v, temps) = irregular_state(1.0);
    let ens = classical(x, v, temps, Atomicity::Monatomic);
    let phi = k_phi(1.0);
    let zeta = k_zeta(1.0);
    let dt = 1e-3;
    let forward = rk4_step(&ens, &phi, &zeta, dt).unwrap();
    let back = rk4_step(&forward, &phi, &zeta, -dt).unwrap();
    for a in 0..ens.n() {
        for axis in 0..3 {
            assert!((back.x[a][axis] - ens.x[a][axis]).abs() <= 1e-13);
            assert!((back.v[a][axis] - ens.v[a][axis]).abs() <= 1e-13);
        }
        assert!((back.temps[a] - ens.temps[a]).abs() <= 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn classical_rhs_conserves_for_random_states(
        seed in any::<u64>(),
        n in 2usize..6,
        chi_index in 0usize..4,
    ) {
        let chi = Atomicity::ALL[chi_index];
        let mut s = seed;
        let mut x = Vec::new();
        let mut v = Vec::new();
        let mut temps = Vec::new();
        for _ in 0..n {
            x.push([lcg(&mut s) * 3.0, lcg(&mut s) * 3.0, lcg(&mut s) * 3.0]);
            v.push([lcg(&mut s) - 0.5, lcg(&mut s) - 0.5, lcg(&mut s) - 0.5]);
            temps.push(0.2 + 2.8 * lcg(&mut s));
        }
        let ens = classical(x, v, temps, chi);
        let phi = KernelSpec::inverse_power(1.0, 0.5, KernelRole::Phi).unwrap();
        let zeta = k_zeta(0.6);
        let d = rhs(&ens, &phi, &zeta).unwrap();

        let dv_scale: f64 = d.dv.iter().map(norm3).fold(0.0, f64::max);
        prop_assert!(norm3(&sum3(&d.dv)) <= 1e-14 * dv_scale.max(1.0));

        let cv = f64::from(chi.degrees_of_freedom()) / 2.0;
        let rate: f64 = (0..n).map(|a| cv * d.dtemp[a] + dot3(&ens.v[a], &d.dv[a])).sum();
        prop_assert!(rate.abs() <= 1e-13);

        let entropy: f64 = (0..n).map(|a| cv * d.dtemp[a] / ens.temps[a]).sum();
        prop_assert!(entropy >= -1e-13);
    }
}
