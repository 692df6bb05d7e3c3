//! Monte Carlo simulation of one-dimensional super-Brownian motion
//! (branching rate one, total mass a Feller diffusion `dX = sqrt(X) dB`).
//!
//! Two backends produce density snapshots `X(t, .)` on the lattice `h Z`:
//! critical binary branching Brownian particles, and a grid scheme for the
//! SPDE. Replicates are independent; replicate `i` draws from its own
//! generator seeded by `replicate_seed(seed, i)`, so results do not depend
//! on scheduling.

mod particles;
mod spde;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;

pub use spde::SpdeScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Particles,
    SpdeGrid,
}

impl std::str::FromStr for Backend {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particles" => Ok(Backend::Particles),
            "spde_grid" | "spde" => Ok(Backend::SpdeGrid),
            other => Err(LabError::invalid("backend", format!("unknown backend `{other}` (particles, spde_grid)"))),
        }
    }
}

/// A point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mass: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMeasure {
    Atoms(Vec<Atom>),
    Density(GridFunction),
}

impl InitialMeasure {
    pub fn delta(mass: f64) -> Self {
        InitialMeasure::Atoms(vec![Atom { mass, x: 0.0 }])
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            InitialMeasure::Atoms(a) => a.iter().map(|a| a.mass).sum(),
            InitialMeasure::Density(g) => g.integral(),
        }
    }

    /// Masses on the lattice `h Z`, as `(index, mass)` pairs.
    fn on_lattice(&self, h: f64) -> Vec<(i64, f64)> {
        match self {
            InitialMeasure::Atoms(atoms) => atoms
                .iter()
                .filter(|a| a.mass > 0.0)
                .map(|a| ((a.x / h).round() as i64, a.mass))
                .collect(),
            InitialMeasure::Density(g) => {
                let lo = (g.x_min / h).ceil() as i64;
                let hi = (g.x_max / h).floor() as i64;
                (lo..=hi)
                    .map(|i| (i, h * g.eval(i as f64 * h).max(0.0)))
                    .filter(|(_, m)| *m > 0.0)
                    .collect()
            }
        }
    }
}

/// Simulation parameters shared by both backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub backend: Backend,
    pub x0: InitialMeasure,
    pub t_final: f64,
    /// Lattice spacing of the snapshots (SPDE grid spacing, particle histogram bin width).
    pub h: f64,
    /// SPDE time step; `None` means `h^2 / 2`.
    pub dt: Option<f64>,
    /// Snapshots cover at least this window; it grows to cover the support.
    pub window: (f64, f64),
    pub n_particles_per_unit_mass: u64,
    /// Each particle branches at total rate `calibration * n_ppum` (binary
    /// split or death with probability 1/2 each), so the mass of a particle
    /// system is a Feller diffusion in the limit when the constant is one.
    pub branching_calibration: f64,
    pub spde_scheme: SpdeScheme,
    pub seed: u64,
}

pub const DEFAULT_H: f64 = 0.05;
pub const DEFAULT_NPPUM: u64 = 1000;

impl SimConfig {
    pub fn new(backend: Backend, x0: InitialMeasure, t_final: f64, seed: u64) -> Self {
        Self {
            backend,
            x0,
            t_final,
            h: DEFAULT_H,
            dt: None,
            window: (-4.0, 4.0),
            n_particles_per_unit_mass: DEFAULT_NPPUM,
            branching_calibration: 1.0,
            spde_scheme: SpdeScheme::FellerSplit,
            seed,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(0.5 * self.h * self.h)
    }

    /// Total mass beyond which a run is declared unstable. A Feller diffusion
    /// started from `m` exceeds `a` before time `t` with probability of order
    /// `exp(-2 a / t)` once `a >> m`, so the cap is `100 max(m, t)`.
    pub fn mass_cap(&self) -> f64 {
        100.0 * self.x0.total_mass().max(self.t_final)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(LabError::invalid("t_final", "must be positive"));
        }
        if !(self.h > 0.0) {
            return Err(LabError::invalid("h", "must be positive"));
        }
        if !(self.window.0 < self.window.1) {
            return Err(LabError::invalid("window", "need window.0 < window.1"));
        }
        match self.backend {
            Backend::SpdeGrid => {
                let dt = self.dt();
                if !(dt > 0.0) || dt > 0.5 * self.h * self.h * (1.0 + 1e-12) {
                    return Err(LabError::invalid(
                        "dt",
                        format!("explicit diffusion needs dt <= h^2/2 = {:e}, got {dt:e}", 0.5 * self.h * self.h),
                    ));
                }
            }
            Backend::Particles => {
                if self.n_particles_per_unit_mass == 0 {
                    return Err(LabError::invalid("n_particles_per_unit_mass", "must be positive"));
                }
                if !(self.branching_calibration > 0.0) {
                    return Err(LabError::invalid("branching_calibration", "must be positive"));
                }
            }
        }
        let m = self.x0.total_mass();
        if !(m >= 0.0) || !m.is_finite() {
            return Err(LabError::invalid("x0", "initial mass must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One simulated replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replicate {
    pub snapshot: GridFunction,
    pub total_mass: f64,
    /// Rightmost occupied point seen at any time up to `t_final`
    /// (`-inf` if the initial measure is null).
    pub max_right: f64,
    /// Fraction of cell updates clipped at zero (Euler scheme only).
    pub clip_fraction: f64,
}

/// Snapshots of independent replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityEnsemble {
    pub config: SimConfig,
    pub replicate_seeds: Vec<u64>,
    pub replicates: Vec<Replicate>,
}

impl DensityEnsemble {
    pub fn snapshots(&self) -> impl Iterator<Item = &GridFunction> {
        self.replicates.iter().map(|r| &r.snapshot)
    }

    pub fn total_masses(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.total_mass).collect()
    }
}

/// SplitMix64 step, used to derive per-replicate seeds.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run a single replicate with the given generator.
pub fn run_replicate(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Replicate> {
    match cfg.backend {
        Backend::Particles => particles::run(cfg, rng),
        Backend::SpdeGrid => spde::run(cfg, rng),
    }
}

pub fn simulate(cfg: &SimConfig, n_replicates: usize) -> Result<DensityEnsemble> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..n_replicates as u64).map(|i| replicate_seed(cfg.seed, i)).collect();
    let replicates = seeds
        .par_iter()
        .map(|&s| run_replicate(cfg, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityEnsemble {
        config: cfg.clone(),
        replicate_seeds: seeds,
        replicates,
    })
}

/// Lattice masses `(first_index, masses)` to a density snapshot covering
/// `window` and the occupied cells.
pub(crate) fn lattice_snapshot(h: f64, window: (f64, f64), first: i64, masses: &[f64], label: &str) -> Result<GridFunction> {
    let occupied = masses.iter().position(|m| *m > 0.0).map(|lo| {
        let hi = masses.iter().rposition(|m| *m > 0.0).unwrap_or(lo);
        (first + lo as i64, first + hi as i64)
    });
    let mut lo = (window.0 / h).floor() as i64;
    let mut hi = (window.1 / h).ceil() as i64;
    if let Some((a, b)) = occupied {
        lo = lo.min(a - 1);
        hi = hi.max(b + 1);
    }
    let values = (lo..=hi)
        .map(|i| {
            let k = i - first;
            if k >= 0 && (k as usize) < masses.len() {
                masses[k as usize] / h
            } else {
                0.0
            }
        })
        .collect();
    GridFunction::new(lo as f64 * h, hi as f64 * h, values, label)?.into_nonnegative()
}

/// Conditioning on survival from a small atom, approximating the canonical
/// cluster law at time `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub t: f64,
    pub backend: Backend,
    /// Atom mass as a fraction of `t`.
    pub m0_over_t: f64,
    /// Grid spacing and time step at `t = 1`; at time `t` the grid is
    /// `h1 sqrt(t)` and the time step `dt1 t`, so runs at different `t`
    /// are exact scaled copies of one discretization.
    pub h1: f64,
    pub dt1: Option<f64>,
    pub n_particles_per_unit_mass: u64,
    pub spde_scheme: SpdeScheme,
    /// Maximum total number of attempts over the whole sample.
    pub budget: u64,
    pub seed: u64,
}

pub const DEFAULT_M0_OVER_T: f64 = 1.0 / 200.0;

impl ClusterConfig {
    pub fn new(t: f64, seed: u64) -> Self {
        Self {
            t,
            backend: Backend::SpdeGrid,
            m0_over_t: DEFAULT_M0_OVER_T,
            h1: DEFAULT_H,
            dt1: None,
            n_particles_per_unit_mass: DEFAULT_NPPUM,
            spde_scheme: SpdeScheme::FellerSplit,
            budget: 50_000_000,
            seed,
        }
    }

    pub fn m0(&self) -> f64 {
        self.m0_over_t * self.t
    }

    /// Survival probability `1 - exp(-2 m0 / t)` of one attempt.
    pub fn survival_probability(&self) -> f64 {
        -(-2.0 * self.m0() / self.t).exp_m1()
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = self.t.sqrt();
        let h = self.h1 * s;
        let mut cfg = SimConfig::new(self.backend, InitialMeasure::delta(self.m0()), self.t, self.seed);
        cfg.h = h;
        cfg.dt = Some(self.dt1.unwrap_or(0.5 * self.h1 * self.h1) * self.t);
        cfg.window = (-4.0 * s, 4.0 * s);
        cfg.n_particles_per_unit_mass = (self.n_particles_per_unit_mass as f64 / self.t).round().max(1.0) as u64;
        cfg.spde_scheme = self.spde_scheme;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSample {
    pub snapshot: GridFunction,
    pub total_mass: f64,
    pub conditioned_on_survival: bool,
    /// Attempts used, including the surviving one.
    pub attempts: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterEnsemble {
    pub config: ClusterConfig,
    pub samples: Vec<ClusterSample>,
    pub total_attempts: u64,
}

impl ClusterEnsemble {
    /// Survivors per attempt; estimates `1 - exp(-2 m0 / t)`.
    pub fn survival_frequency(&self) -> f64 {
        self.samples.len() as f64 / self.total_attempts as f64
    }

    /// Rate of clusters alive at time `t` under the canonical measure, `2 / t`.
    pub fn cluster_rate(&self) -> f64 {
        2.0 / self.config.t
    }
}

/// Draw `n_replicates` surviving runs from the atom `m0 delta_0`. Sample
/// `k` retries with its own generator until it survives.
pub fn sample_cluster(cfg: &ClusterConfig, n_replicates: usize) -> Result<ClusterEnsemble> {
    if !(cfg.t > 0.0) {
        return Err(LabError::invalid("t", "must be positive"));
    }
    if !(cfg.m0_over_t > 0.0) {
        return Err(LabError::invalid("m0_over_t", "must be positive"));
    }
    let p = cfg.survival_probability();
    let required = (n_replicates as f64 / p).ceil() as u64;
    if required > cfg.budget {
        return Err(LabError::RejectionBudgetExceeded {
            p,
            required,
            budget: cfg.budget,
        });
    }
    let sim = cfg.sim_config();
    sim.validate()?;
    // Per-sample cap: generous multiple of the mean, so a budget failure is a
    // genuine sign that survival is much rarer than predicted.
    let per_sample_cap = ((20.0 / p).ceil() as u64).max(1000);
    let samples = (0..n_replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(cfg.seed, k));
            let mut attempts = 0;
            loop {
                attempts += 1;
                let r = run_replicate(&sim, &mut rng)?;
                if r.total_mass > 0.0 {
                    return Ok(ClusterSample {
                        snapshot: r.snapshot,
                        total_mass: r.total_mass,
                        conditioned_on_survival: true,
                        attempts,
                    });
                }
                if attempts >= per_sample_cap {
                    return Err(LabError::RejectionBudgetExceeded {
                        p,
                        required: attempts,
                        budget: per_sample_cap,
                    });
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let total_attempts = samples.iter().map(|s| s.attempts).sum();
    Ok(ClusterEnsemble {
        config: cfg.clone(),
        samples,
        total_attempts,
    })
}

/// Estimate of the canonical measure of `{X_s([R, inf)) > 0 for some s <= t}`
/// from an ensemble started at `m delta_0`, with the reference shape
/// `R^-2 (R / sqrt t)^3 exp(-R^2 / 2t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HittingRow {
    pub r: f64,
    pub hits: usize,
    pub frequency: f64,
    /// `-ln(1 - frequency) / m`.
    pub canonical_estimate: f64,
    pub shape: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HittingTail {
    pub t: f64,
    pub rows: Vec<HittingRow>,
    /// Smallest `c >= 1` with `estimate <= c * shape` on every row.
    pub fitted_c: f64,
    /// Slope of `ln(estimate / (R t^-3/2))` against `-R^2 / 2t`; the bound has slope one.
    pub gaussian_slope: Option<crate::stats::PowerLawFit>,
}

pub fn hitting_tail_check(ens: &DensityEnsemble, r_values: &[f64]) -> Result<HittingTail> {
    let t = ens.config.t_final;
    let m = ens.config.x0.total_mass();
    if let InitialMeasure::Atoms(a) = &ens.config.x0 {
        if a.len() != 1 || a[0].x != 0.0 {
            return Err(LabError::invalid("x0", "hitting test needs a single atom at 0"));
        }
    } else {
        return Err(LabError::invalid("x0", "hitting test needs a single atom at 0"));
    }
    let n = ens.replicates.len() as f64;
    let mut rows = Vec::new();
    for &r in r_values {
        if !(r > 2.0 * t.sqrt()) {
            return Err(LabError::invalid("R", format!("need R > 2 sqrt(t), got {r}")));
        }
        let hits = ens.replicates.iter().filter(|rep| rep.max_right >= r).count();
        let frequency = hits as f64 / n;
        let canonical_estimate = -(-frequency).ln_1p() / m;
        let shape = r.powi(-2) * (r / t.sqrt()).powi(3) * (-r * r / (2.0 * t)).exp();
        rows.push(HittingRow {
            r,
            hits,
            frequency,
            canonical_estimate,
            shape,
        });
    }
    let fitted_c = rows
        .iter()
        .map(|row| row.canonical_estimate / row.shape)
        .fold(1.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|row| row.hits > 0)
        .map(|row| (-row.r * row.r / (2.0 * t), (row.canonical_estimate * t.powf(1.5) / row.r).ln()))
        .unzip();
    let gaussian_slope = crate::stats::linear_fit(&xs, &ys).ok();
    Ok(HittingTail {
        t,
        rows,
        fitted_c,
        gaussian_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_seeds_differ() {
        let a = replicate_seed(1, 0);
        let b = replicate_seed(1, 1);
        let c = replicate_seed(2, 0);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn null_initial_measure_stays_null() {
        for backend in [Backend::Particles, Backend::SpdeGrid] {
            let cfg = SimConfig::new(backend, InitialMeasure::Atoms(vec![]), 1.0, 3);
            let ens = simulate(&cfg, 4).unwrap();
            for r in &ens.replicates {
                assert_eq!(r.total_mass, 0.0);
                assert!(r.snapshot.values.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn spde_step_must_respect_diffusion_limit() {
        let mut cfg = SimConfig::new(Backend::SpdeGrid, InitialMeasure::delta(1.0), 1.0, 3);
        cfg.dt = Some(cfg.h * cfg.h);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cluster_budget_is_checked_up_front() {
        let mut cfg = ClusterConfig::new(1.0, 1);
        cfg.m0_over_t = 1e-6;
        cfg.budget = 1000;
        assert!(matches!(sample_cluster(&cfg, 10), Err(LabError::RejectionBudgetExceeded { .. })));
    }
}
