//! Test-side oracles built on representations disjoint from the library's
//! defining-integral path: K_j through the cosh form
//! INT_0^inf e^{-g cosh t} cosh(jt) dt (trapezoid; the integrand is even in t
//! and decays beyond double precision inside the window, so the rule
//! converges spectrally), and the tail integral through
//! INT_0^inf cosh t * E_1(g cosh t) dt with E_1 from the standard continued
//! fraction. Nothing here touches the crate's quadrature or series code.

#![allow(dead_code)]

/// Upper integration limit: g (cosh t - 1) reaches 760, past which the
/// weight is flushed to zero at double precision.
fn t_upper(gamma: f64) -> f64 {
    (1.0 + 760.0 / gamma).acosh()
}

/// Scaled oracle e^g K_j(g), trapezoid with n panels.
pub fn oracle_scaled_k(j: u32, gamma: f64) -> f64 {
    let t_max = t_upper(gamma);
    let n = 200_000usize;
    let h = t_max / n as f64;
    let f = |t: f64| (-gamma * (t.cosh() - 1.0)).exp() * (j as f64 * t).cosh();
    let mut sum = 0.5 * (f(0.0) + f(t_max));
    for i in 1..n {
        sum += f(i as f64 * h);
    }
    sum * h
}

/// Oracle K_j(g) (unscaled; underflows like e^{-g}).
pub fn oracle_k(j: u32, gamma: f64) -> f64 {
    (-gamma).exp() * oracle_scaled_k(j, gamma)
}

/// e^x E_1(x) by the standard continued fraction (modified Lentz), valid for
/// x >= 1 to near machine precision.
pub fn oracle_e1_scaled(x: f64) -> f64 {
    let mut b = x + 1.0;
    let mut c = 1.0 / 1e-308;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..400 {
        let a = -(i as f64) * (i as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Scaled oracle e^g INT_g^inf K_1(y)/y dy via Fubini:
/// INT_0^inf cosh t E_1(g cosh t) dt.
pub fn oracle_scaled_tail(gamma: f64) -> f64 {
    let t_max = t_upper(gamma);
    let n = 200_000usize;
    let h = t_max / n as f64;
    let f = |t: f64| {
        let u = t.cosh();
        let w = (-gamma * (u - 1.0)).exp();
        if w == 0.0 {
            0.0
        } else {
            u * w * oracle_e1_scaled(gamma * u)
        }
    };
    let mut sum = 0.5 * (f(0.0) + f(t_max));
    for i in 1..n {
        sum += f(i as f64 * h);
    }
    sum * h
}

/// Oracle tail integral (unscaled).
pub fn oracle_tail(gamma: f64) -> f64 {
    (-gamma).exp() * oracle_scaled_tail(gamma)
}

/// Least-squares slope of ln(y) against ln(x); panics on nonpositive data.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        assert!(x > 0.0 && y > 0.0, "log-log fit needs positive data");
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Geometric grid of n points spanning [lo, hi].
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let step = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| lo * step.powi(i as i32)).collect()
}
