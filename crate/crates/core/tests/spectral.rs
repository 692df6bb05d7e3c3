use sbmlab::grid::{derivative, second_derivative};
use sbmlab::spectral::{self, Builtin, KillingSpec};
use sbmlab::{experiments, GridFunction, LabError};

fn both(b: Builtin) -> (f64, f64) {
    let spec = KillingSpec::builtin(b).unwrap();
    let h = spectral::eig_hermite(&spec, spectral::DEFAULT_BASIS).unwrap();
    let f = spectral::eig_neumann_fd(&spec, spectral::DEFAULT_K, spectral::DEFAULT_FD_N).unwrap();
    (h.lambda0(), f.lambda0())
}

#[test]
fn unkilled_spectrum_is_half_integers() {
    let spec = KillingSpec::builtin(Builtin::Zero).unwrap();
    let r = spectral::eig_hermite(&spec, 40).unwrap();
    for (n, l) in r.eigenvalues.iter().take(8).enumerate() {
        assert!((l - 0.5 * n as f64).abs() < 1e-10, "{n}: {l}");
    }
    let psi0 = r.psi0();
    assert!(psi0.values.iter().all(|v| (v - 1.0).abs() < 1e-8));
    assert!((r.theta0 - 1.0).abs() < 1e-8);
}

#[test]
fn unkilled_fd_on_full_interval() {
    let phi = GridFunction::from_fn(-10.0, 10.0, 201, "zero", |_| 0.0).unwrap();
    let spec = KillingSpec::new(phi, false).unwrap();
    let r = spectral::eig_neumann_fd(&spec, 8.0, 2000).unwrap();
    assert!(r.lambda0().abs() < 1e-4);
    assert!((r.eigenvalues[1] - 0.5).abs() < 1e-2);
}

#[test]
fn half_f_has_lambda_one_half() {
    let (h, f) = both(Builtin::FHalf);
    assert!((h - 0.5).abs() < 1e-3, "{h}");
    assert!((f - 0.5).abs() < 1e-3, "{f}");
}

#[test]
fn f_lead_eigenvalue() {
    let (h, f) = both(Builtin::F);
    assert!((h - 0.8882).abs() < 5e-3, "{h}");
    assert!((f - 0.8882).abs() < 5e-3, "{f}");
    assert!((h - f).abs() < 1e-3);
}

#[test]
fn g_lead_eigenvalue_is_one() {
    let (h, f) = both(Builtin::G);
    assert!((h - 1.0).abs() < 1e-3, "{h}");
    assert!((f - 1.0).abs() < 1e-3, "{f}");
}

#[test]
fn eigenfunctions_are_orthonormal_and_lead_is_positive() {
    for b in [Builtin::F, Builtin::G] {
        let spec = KillingSpec::builtin(b).unwrap();
        let r = spectral::eig_hermite(&spec, spectral::DEFAULT_BASIS).unwrap();
        assert!(r.psi0().values.iter().all(|v| *v > -1e-8));
        assert!(r.eigenvalues.iter().all(|l| *l >= -1e-8));
        let k = r.eigenfunctions.len().min(5);
        for i in 0..k {
            for j in 0..k {
                let ip = spectral::inner_product_m(&r.eigenfunctions[i], &r.eigenfunctions[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-6, "{b:?} <psi{i}, psi{j}> = {ip}");
            }
        }
    }
}

#[test]
fn lead_eigenvalue_converges_in_basis_size() {
    let spec = KillingSpec::builtin(Builtin::F).unwrap();
    let a = spectral::eig_hermite(&spec, spectral::DEFAULT_BASIS).unwrap().lambda0();
    let b = spectral::eig_hermite_with(&spec, 2 * spectral::DEFAULT_BASIS, 4 * spectral::DEFAULT_BASIS + 60).unwrap().lambda0();
    assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
}

/// `e^{x^2/2} G'` on a grid restricted to `[-a, a]`.
fn g_candidate(a: f64) -> GridFunction {
    let g = spectral::g_profile_for_killing().unwrap();
    let full = experiments::g_eigenfunction_candidate(&g).unwrap();
    let n = ((2.0 * a) / full.h()).round() as usize + 1;
    GridFunction::from_fn(-a, a, n, "cand", |x| full.eval(x)).unwrap()
}

#[test]
fn analytic_g_eigenpair_residual() {
    // A^G f = f''/2 - x f'/2 - G f with f = -e^{x^2/2} G' should equal -f.
    let g = spectral::g_profile_for_killing().unwrap();
    let f = g_candidate(6.0);
    let d1 = derivative(&f).unwrap();
    let d2 = second_derivative(&f).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..f.n_points() {
        let x = f.x(i);
        if x.abs() > 4.0 {
            continue;
        }
        let w = (-0.5 * x * x).exp();
        let af = 0.5 * d2.values[i] - 0.5 * x * d1.values[i] - g.eval(x) * f.values[i];
        num += (af + f.values[i]).powi(2) * w;
        den += f.values[i].powi(2) * w;
    }
    let rel = (num / den).sqrt();
    assert!(rel <= 1e-2, "{rel}");
}

#[test]
fn g_eigenfunction_matches_derivative_form() {
    let spec = KillingSpec::builtin(Builtin::G).unwrap();
    let cand = experiments::g_eigenfunction_candidate(&spec.phi).unwrap();
    for r in [
        spectral::eig_hermite(&spec, spectral::DEFAULT_BASIS).unwrap(),
        spectral::eig_neumann_fd(&spec, spectral::DEFAULT_K, spectral::DEFAULT_FD_N).unwrap(),
    ] {
        let err = experiments::weighted_relative_error(r.psi0(), &cand, -4.0, 4.0);
        assert!(err <= 1e-2, "{:?}: {err}", r.method);
    }
}

#[test]
fn g_candidate_is_square_integrable() {
    let norm = |a: f64| {
        let f = g_candidate(a);
        f.map("sq", |x, v| v * v * (-0.5 * x * x).exp()).unwrap().integral()
    };
    let (n6, n8) = (norm(6.0), norm(8.0));
    assert!(n6.is_finite() && n6 > 0.0);
    assert!(((n8 - n6) / n6).abs() < 1e-3, "{n6} vs {n8}");
}

#[test]
fn dimension_range() {
    assert!((spectral::dimension_from_lambda0(0.8882).unwrap() - 0.2236).abs() < 1e-12);
    assert!(matches!(spectral::dimension_from_lambda0(0.5), Err(LabError::OutOfRange(_))));
    assert!(matches!(spectral::dimension_from_lambda0(1.0), Err(LabError::OutOfRange(_))));
}

#[test]
fn survival_without_killing_is_certain() {
    let spec = KillingSpec::builtin(Builtin::Zero).unwrap();
    let eig = spectral::eig_hermite(&spec, 20).unwrap();
    let s = spectral::survival_probability_check(&spec, &eig, 2.0, 500, 3, 0.01).unwrap();
    assert_eq!(s.mc_estimate, 1.0);
    assert!((s.spectral_prediction - 1.0).abs() < 1e-8);
}

#[test]
fn survival_check_is_reproducible() {
    let spec = KillingSpec::builtin(Builtin::FHalf).unwrap();
    let eig = spectral::eig_hermite(&spec, 60).unwrap();
    let a = spectral::survival_probability_check(&spec, &eig, 1.0, 3000, 11, 0.01).unwrap();
    let b = spectral::survival_probability_check(&spec, &eig, 1.0, 3000, 11, 0.01).unwrap();
    assert_eq!(a.mc_estimate, b.mc_estimate);
    assert!(a.z_full.abs() < 4.0, "{}", a.z_full);
}
