use sbmlab::grid::derivative;
use sbmlab::profiles::{self, Fate, Lambda, PdeRunConfig};
use sbmlab::GridFunction;

/// Fixed-step RK4 for `F'' = -y F' - 2F + F^2` from `F(0) = c, F'(0) = 0`;
/// true when the trajectory goes negative before `x_max`.
fn rk4_goes_negative(c: f64, x_max: f64) -> bool {
    let f = |y: f64, s: [f64; 2]| [s[1], -y * s[1] - 2.0 * s[0] + s[0] * s[0]];
    let h = 1e-3;
    let mut s = [c, 0.0];
    let mut y = 0.0;
    while y < x_max {
        let k1 = f(y, s);
        let k2 = f(y + h / 2.0, [s[0] + h / 2.0 * k1[0], s[1] + h / 2.0 * k1[1]]);
        let k3 = f(y + h / 2.0, [s[0] + h / 2.0 * k2[0], s[1] + h / 2.0 * k2[1]]);
        let k4 = f(y + h, [s[0] + h * k3[0], s[1] + h * k3[1]]);
        for i in 0..2 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        y += h;
        if s[0] < 0.0 {
            return true;
        }
        if s[0] > 10.0 {
            return false;
        }
    }
    false
}

#[test]
fn f_initial_value_matches_independent_rk4_bisection() {
    let r = profiles::solve_f(10.0, 2001, 1e-10).unwrap();
    let (mut lo, mut hi) = (1.0, 1.8);
    assert!(rk4_goes_negative(lo, 10.0) && !rk4_goes_negative(hi, 10.0));
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if rk4_goes_negative(mid, 10.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((r.c_star - 0.5 * (lo + hi)).abs() < 1e-6, "{} vs {}", r.c_star, 0.5 * (lo + hi));
    assert!(r.bracket.1 - r.bracket.0 <= 1e-10);
}

#[test]
fn f_is_stable_under_refinement() {
    let a = profiles::solve_f(10.0, 2001, 1e-10).unwrap();
    let b = profiles::solve_f(12.0, 4001, 1e-12).unwrap();
    assert!((a.c_star - b.c_star).abs() < 1e-6);
}

#[test]
fn f_tail_and_shape() {
    let r = profiles::solve_f(10.0, 2001, 1e-10).unwrap();
    let f = &r.profile;
    assert!(100.0 * f.eval(10.0) < 1e-3);
    assert!(f.values.iter().all(|v| *v >= 0.0));
    assert!(f.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    let full = f.even_extension().unwrap();
    for x in [0.3, 1.7, 4.2] {
        assert!((full.eval(x) - full.eval(-x)).abs() < 1e-12);
    }
}

#[test]
fn shooting_ladder_classification() {
    let c = profiles::solve_f(10.0, 2001, 1e-10).unwrap().c_star;
    for d in [1e-6, 1e-4, 1e-2, 0.3, 1.0] {
        assert_eq!(profiles::classify_initial_value(c - d, 10.0).unwrap().0, Fate::Negative, "c - {d}");
    }
    for d in [1e-6, 1e-4, 1e-2, 0.3] {
        assert_ne!(profiles::classify_initial_value(c + d, 10.0).unwrap().0, Fate::Negative, "c + {d}");
    }
    assert_eq!(profiles::classify_initial_value(2.5, 10.0).unwrap().0, Fate::BlowUp);
}

fn interior_residual(u: &GridFunction, a: f64, b: f64) -> f64 {
    let r = profiles::ode_residual(u).unwrap();
    r.xs().zip(&r.values).filter(|(x, _)| *x >= a && *x <= b).map(|(_, v)| v.abs()).fold(0.0, f64::max)
}

#[test]
fn profile_residuals_are_small() {
    let f = profiles::solve_f(10.0, 2001, 1e-10).unwrap().profile.even_extension().unwrap();
    assert!(interior_residual(&f, -9.0, 9.0) < 1e-3);
    let g = profiles::solve_g(-10.0, 10.0, 2001, profiles::DEFAULT_INFINITY_SURROGATE, 1e-3).unwrap();
    assert!(interior_residual(&g.profile, -9.0, 9.0) < 1e-3);
}

#[test]
fn residual_converges_under_refinement() {
    let coarse = profiles::solve_f(10.0, 501, 1e-10).unwrap().profile;
    let fine = profiles::solve_f(10.0, 1001, 1e-10).unwrap().profile;
    let (rc, rf) = (interior_residual(&coarse, 0.5, 9.0), interior_residual(&fine, 0.5, 9.0));
    assert!(rf < rc / 4.0, "{rc} -> {rf}");
}

#[test]
fn v_lambda_left_value_and_bounds() {
    let mut cfg = PdeRunConfig::new(Lambda::Finite(2.0), 1.0);
    cfg.x_min = -12.0;
    let v = profiles::solve_v_lambda(&cfg).unwrap();
    // 2 lambda / (2 + lambda t) = 1.
    assert!((v.eval(-8.0) - 1.0).abs() < 1e-6);
    assert!(v.values.iter().all(|x| *x >= 0.0 && *x <= 2.0 + 1e-9));
    assert!(v.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn v_lambda_is_increasing_in_lambda() {
    let v: Vec<GridFunction> = [0.5, 1.0, 4.0, 100.0]
        .iter()
        .map(|&l| profiles::solve_v_lambda(&PdeRunConfig::new(Lambda::Finite(l), 1.0)).unwrap())
        .collect();
    for w in v.windows(2) {
        assert!(w[0].values.iter().zip(&w[1].values).all(|(a, b)| *a <= *b + 1e-9));
    }
}

#[test]
fn v_lambda_scaling_identity() {
    // v^lambda(t, x) = lambda v^1(lambda t, sqrt(lambda) x) with lambda = 4, t = 0.5.
    let lam = 4.0;
    let a = profiles::solve_v_lambda(&PdeRunConfig::new(Lambda::Finite(lam), 0.5)).unwrap();
    let mut cfg = PdeRunConfig::new(Lambda::Finite(1.0), lam * 0.5);
    cfg.x_min = -20.0;
    cfg.x_max = 20.0;
    cfg.n_points = 4001;
    let b = profiles::solve_v_lambda(&cfg).unwrap();
    let gap = (0..=600)
        .map(|i| -3.0 + i as f64 * 0.01)
        .map(|x| (a.eval(x) - lam * b.eval(lam.sqrt() * x)).abs())
        .fold(0.0, f64::max);
    assert!(gap < 2e-3, "{gap}");
}

#[test]
fn v_infinity_self_similarity_and_bound() {
    let g = profiles::solve_g(-10.0, 10.0, 2001, profiles::DEFAULT_INFINITY_SURROGATE, 1e-3).unwrap();
    for t in [0.5, 1.0, 2.0] {
        let v = profiles::solve_v_lambda(&PdeRunConfig::new(Lambda::Infinite, t)).unwrap();
        assert!(v.values.iter().all(|x| *x <= 2.0 / t + 1e-6));
        let s = t.sqrt();
        let gap = (0..=800)
            .map(|i| -4.0 * s + i as f64 * 0.01 * s)
            .map(|x| (t * v.eval(x) - g.shooting.eval(x / s)).abs())
            .fold(0.0, f64::max);
        assert!(gap < 5e-3, "t = {t}: {gap}");
    }
}

#[test]
fn g_profile_properties() {
    let g = profiles::solve_g(-10.0, 10.0, 2001, profiles::DEFAULT_INFINITY_SURROGATE, 1e-3).unwrap();
    assert!(g.gap <= profiles::G_CROSS_CHECK_TOL);
    let p = &g.profile;
    assert!((p.eval(-10.0) - 2.0).abs() < 1e-3);
    let g0 = p.eval(0.0);
    assert!(g0 > 1.0 && g0 < 2.0, "{g0}");
    let d = derivative(p).unwrap();
    assert!(d.values.iter().all(|v| *v <= 1e-6));
    let ratio = g.shooting.eval(4.0) / (4.0 * (-8.0f64).exp());
    assert!(ratio > 0.0 && ratio < 10.0, "{ratio}");
}

#[test]
fn g_routes_agree_on_a_different_grid() {
    let g = profiles::solve_g(-9.0, 9.0, 1801, profiles::DEFAULT_INFINITY_SURROGATE, 1e-3).unwrap();
    assert!(g.gap <= profiles::G_CROSS_CHECK_TOL);
}

#[test]
fn surrogate_gap_decreases_with_lambda() {
    let g = profiles::solve_g(-10.0, 10.0, 2001, profiles::DEFAULT_INFINITY_SURROGATE, 1e-3).unwrap();
    let lambdas = [10.0, 30.0, 100.0, 300.0, 1000.0];
    let gaps: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let v = profiles::solve_v_lambda(&PdeRunConfig::new(Lambda::Finite(l), 1.0)).unwrap();
            v.sup_distance_on(&g.shooting, -10.0, 10.0)
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    let fit = sbmlab::stats::power_law_fit(&lambdas, &gaps).unwrap();
    println!("sup gap vs lambda: {gaps:?}; measured rate {:.3} (G(0) - 1 = {:.3})", -fit.exponent, g.profile.eval(0.0) - 1.0);
}
