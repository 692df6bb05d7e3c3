use sbmlab::boundary_stats::right_mass;
use sbmlab::experiments;
use sbmlab::sim::{self, Backend, ClusterConfig, InitialMeasure, SimConfig};
use sbmlab::stats::{ks_two_sample, mean_stderr};

fn config(backend: Backend, mass: f64, seed: u64) -> SimConfig {
    SimConfig::new(backend, InitialMeasure::delta(mass), 1.0, seed)
}

#[test]
fn identical_seeds_give_identical_ensembles() {
    for backend in [Backend::SpdeGrid, Backend::Particles] {
        let cfg = config(backend, 1.0, 42);
        let a = sim::simulate(&cfg, 24).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sim::simulate(&cfg, 24).unwrap());
        assert_eq!(a.replicate_seeds, b.replicate_seeds);
        for (x, y) in a.replicates.iter().zip(&b.replicates) {
            assert_eq!(x.total_mass.to_bits(), y.total_mass.to_bits());
            assert_eq!(x.snapshot.values, y.snapshot.values);
            assert_eq!(x.snapshot.x_min, y.snapshot.x_min);
        }
        let c = sim::simulate(&config(backend, 1.0, 43), 24).unwrap();
        assert_ne!(a.total_masses(), c.total_masses());
    }
}

#[test]
fn grid_backend_matches_total_mass_closed_forms() {
    let ens = sim::simulate(&config(Backend::SpdeGrid, 1.0, 7), 1500).unwrap();
    for row in experiments::total_mass_checks(&ens, &[0.5, 1.0, 2.0]) {
        assert!(row.z.abs() < 3.0, "{row:?}");
    }
}

#[test]
fn particle_backend_matches_total_mass_closed_forms() {
    let ens = sim::simulate(&config(Backend::Particles, 1.0, 8), 600).unwrap();
    for row in experiments::total_mass_checks(&ens, &[0.5, 1.0, 2.0]) {
        assert!(row.z.abs() < 3.0, "{row:?}");
    }
}

#[test]
fn backends_agree_in_distribution() {
    let a = sim::simulate(&config(Backend::SpdeGrid, 1.0, 9), 600).unwrap();
    let b = sim::simulate(&config(Backend::Particles, 1.0, 10), 600).unwrap();
    let ks = ks_two_sample(&a.total_masses(), &b.total_masses()).unwrap();
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn branching_property() {
    // Two independent copies from m delta_0, summed, against one copy from 2m delta_0.
    let n = 1000;
    let a = sim::simulate(&config(Backend::SpdeGrid, 0.5, 11), n).unwrap().total_masses();
    let b = sim::simulate(&config(Backend::SpdeGrid, 0.5, 12), n).unwrap().total_masses();
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let c = sim::simulate(&config(Backend::SpdeGrid, 1.0, 13), n).unwrap().total_masses();
    let ks = ks_two_sample(&sum, &c).unwrap();
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn laplace_duality_with_profiles() {
    let ens = sim::simulate(&config(Backend::SpdeGrid, 1.0, 14), 1500).unwrap();
    let rows = experiments::duality_checks(&ens, &[(1.0, 0.0), (1.0, 1.0), (2.0, 0.0), (2.0, 1.0)]).unwrap();
    for row in rows {
        assert!(row.z.abs() < 3.0, "{row:?}");
    }
}

#[test]
fn snapshots_are_nonnegative_and_vanish_at_the_edges() {
    let ens = sim::simulate(&config(Backend::SpdeGrid, 1.0, 15), 200).unwrap();
    for s in ens.snapshots() {
        assert!(s.values.iter().all(|v| *v >= 0.0));
        assert_eq!(s.values[0], 0.0);
        assert_eq!(*s.values.last().unwrap(), 0.0);
        assert!((right_mass(s, s.x_min) - s.integral()).abs() < 1e-9 * (1.0 + s.integral()));
    }
}

/// `d/dlambda exp(-2 lambda m / (2 + lambda t))` at 0 by a central difference.
fn mean_mass_from_laplace(m: f64, t: f64) -> f64 {
    let lap = |l: f64| (-2.0 * l * m / (2.0 + l * t)).exp();
    let d = 1e-5;
    -(lap(d) - lap(-d)) / (2.0 * d)
}

#[test]
fn cluster_survival_and_conditioned_mean() {
    let cfg = ClusterConfig::new(1.0, 21);
    let ens = sim::sample_cluster(&cfg, 400).unwrap();
    let p = cfg.survival_probability();
    let n = ens.total_attempts as f64;
    let sd = (p * (1.0 - p) / n).sqrt();
    assert!((ens.survival_frequency() - p).abs() < 3.0 * sd, "{} vs {p}", ens.survival_frequency());
    assert!(ens.samples.iter().all(|s| s.conditioned_on_survival && s.total_mass > 0.0));
    // E[X_t(1) 1(survive)] = m0, so the conditioned mean is m0 / p.
    let target = mean_mass_from_laplace(cfg.m0(), cfg.t) / p;
    let masses: Vec<f64> = ens.samples.iter().map(|s| s.total_mass).collect();
    let (m, se) = mean_stderr(&masses);
    assert!((m - target).abs() < 3.0 * se, "{m} +- {se} vs {target}");
}

#[test]
fn small_atom_limit_is_stable() {
    let mut a = ClusterConfig::new(1.0, 31);
    let mut b = ClusterConfig::new(1.0, 32);
    a.m0_over_t = 1.0 / 200.0;
    b.m0_over_t = 1.0 / 400.0;
    let ma: Vec<f64> = sim::sample_cluster(&a, 400).unwrap().samples.iter().map(|s| s.total_mass).collect();
    let mb: Vec<f64> = sim::sample_cluster(&b, 400).unwrap().samples.iter().map(|s| s.total_mass).collect();
    let ks = ks_two_sample(&ma, &mb).unwrap();
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn hitting_tail_has_gaussian_decay() {
    let ens = sim::simulate(&config(Backend::SpdeGrid, 1.0, 41), 2000).unwrap();
    let tail = sim::hitting_tail_check(&ens, &[2.2, 2.6, 3.0, 3.4, 4.0]).unwrap();
    assert!(tail.fitted_c >= 1.0);
    for r in &tail.rows {
        assert!(r.canonical_estimate <= tail.fitted_c * r.shape * (1.0 + 1e-12));
    }
    let slope = tail.gaussian_slope.as_ref().unwrap().exponent;
    assert!((slope - 1.0).abs() <= 0.2, "{slope}");
    let far = sim::hitting_tail_check(&ens, &[40.0]).unwrap();
    assert_eq!(far.rows[0].hits, 0);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = config(Backend::SpdeGrid, 1.0, 1);
    cfg.t_final = -1.0;
    assert!(sim::simulate(&cfg, 1).is_err());
    let mut cfg = config(Backend::SpdeGrid, 1.0, 1);
    cfg.dt = Some(cfg.h * cfg.h);
    assert!(sim::simulate(&cfg, 1).is_err());
}
