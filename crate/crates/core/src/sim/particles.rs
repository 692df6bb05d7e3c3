//! Critical binary branching Brownian motion with particle mass `1 / n_ppum`.
//!
//! Positions are advanced lazily: a particle only moves when it is picked
//! for a branching event or at the final time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::{lattice_snapshot, Replicate, SimConfig};
use crate::error::{LabError, Result};

#[derive(Clone, Copy)]
struct Particle {
    x: f64,
    t: f64,
}

impl Particle {
    fn advance(&mut self, t: f64, rng: &mut ChaCha8Rng) {
        let z: f64 = rng.sample(StandardNormal);
        self.x += (t - self.t).sqrt() * z;
        self.t = t;
    }
}

pub(super) fn run(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Replicate> {
    let n_ppum = cfg.n_particles_per_unit_mass as f64;
    let eps = 1.0 / n_ppum;
    let rate = cfg.branching_calibration * n_ppum;
    let cap_particles = cfg.mass_cap() * n_ppum;
    let mut ps: Vec<Particle> = Vec::new();
    for (i, m) in cfg.x0.on_lattice(cfg.h) {
        let k = (m * n_ppum).round() as usize;
        ps.extend(std::iter::repeat_n(Particle { x: i as f64 * cfg.h, t: 0.0 }, k));
    }
    let mut max_right = ps.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let mut t = 0.0;
    while !ps.is_empty() {
        let e: f64 = Exp1.sample(rng);
        let dt = e / (rate * ps.len() as f64);
        if t + dt >= cfg.t_final {
            break;
        }
        t += dt;
        let k = rng.random_range(0..ps.len());
        ps[k].advance(t, rng);
        max_right = max_right.max(ps[k].x);
        if rng.random::<bool>() {
            let p = ps[k];
            ps.push(p);
            if ps.len() as f64 > cap_particles {
                return Err(LabError::MassExplosion {
                    mass: ps.len() as f64 * eps,
                    initial: cfg.x0.total_mass(),
                });
            }
        } else {
            ps.swap_remove(k);
        }
    }
    for p in ps.iter_mut() {
        p.advance(cfg.t_final, rng);
        max_right = max_right.max(p.x);
    }
    let total_mass = ps.len() as f64 * eps;
    // Histogram on cells of width h centred at the lattice points.
    let h = cfg.h;
    let (first, masses) = if ps.is_empty() {
        (0, Vec::new())
    } else {
        let idx: Vec<i64> = ps.iter().map(|p| (p.x / h).round() as i64).collect();
        let lo = *idx.iter().min().unwrap();
        let hi = *idx.iter().max().unwrap();
        let mut masses = vec![0.0; (hi - lo) as usize + 1];
        for i in idx {
            masses[(i - lo) as usize] += eps;
        }
        (lo, masses)
    };
    let snapshot = lattice_snapshot(h, cfg.window, first, &masses, "X(t)")?;
    Ok(Replicate {
        snapshot,
        total_mass,
        max_right,
        clip_fraction: 0.0,
    })
}
