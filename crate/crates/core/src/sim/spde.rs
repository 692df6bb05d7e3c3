//! Lattice scheme for `X_t = X''/2 + sqrt(X) W_dot`.
//!
//! Cell masses `m_i = h X(i h)` live on an unbounded lattice; the stored
//! window grows whenever mass reaches its edges.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{lattice_snapshot, Replicate, SimConfig};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpdeScheme {
    /// Explicit diffusion step, then the exact Feller transition of each
    /// cell mass over `dt` (Poisson number of exponential families).
    FellerSplit,
    /// Euler–Maruyama with noise `sqrt(max(X, 0) dt / h) Z` per cell and
    /// clipping at zero.
    EulerClip,
}

impl std::str::FromStr for SpdeScheme {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feller_split" => Ok(SpdeScheme::FellerSplit),
            "euler_clip" => Ok(SpdeScheme::EulerClip),
            other => Err(LabError::invalid("spde_scheme", format!("unknown scheme `{other}` (feller_split, euler_clip)"))),
        }
    }
}

/// Exact transition of `dm = sqrt(m) dB` over time `dt`: given `m`, the mass
/// after `dt` is a sum of `Poisson(2 m / dt)` independent exponentials of
/// mean `dt / 2`.
pub(crate) fn feller_step(m: f64, dt: f64, rng: &mut ChaCha8Rng) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    let rate = 2.0 * m / dt;
    let n = if rate < 1e-9 {
        if rng.random::<f64>() < rate {
            1.0
        } else {
            0.0
        }
    } else {
        Poisson::new(rate).expect("finite positive rate").sample(rng)
    };
    if n == 0.0 {
        0.0
    } else if n <= 8.0 {
        let mut s = 0.0;
        for _ in 0..n as usize {
            let e: f64 = Exp1.sample(rng);
            s += e;
        }
        0.5 * dt * s
    } else {
        Gamma::new(n, 0.5 * dt).expect("positive shape").sample(rng)
    }
}

struct Lattice {
    /// Lattice index of `m[0]`.
    first: i64,
    m: Vec<f64>,
    buf: Vec<f64>,
}

const MARGIN: usize = 4;
const GROW: usize = 64;

impl Lattice {
    fn occupied(&self) -> Option<(usize, usize)> {
        let lo = self.m.iter().position(|v| *v > 0.0)?;
        let hi = self.m.iter().rposition(|v| *v > 0.0)?;
        Some((lo, hi))
    }

    /// Keep at least `MARGIN` empty cells on both sides of the occupied range.
    fn ensure_margin(&mut self, lo: usize, hi: usize) -> (usize, usize) {
        let (mut lo, mut hi) = (lo, hi);
        if lo < MARGIN {
            let mut grown = vec![0.0; GROW];
            grown.extend_from_slice(&self.m);
            self.m = grown;
            self.first -= GROW as i64;
            lo += GROW;
            hi += GROW;
        }
        if hi + MARGIN >= self.m.len() {
            self.m.resize(self.m.len() + GROW, 0.0);
        }
        self.buf.resize(self.m.len(), 0.0);
        (lo, hi)
    }
}

pub(super) fn run(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Replicate> {
    let h = cfg.h;
    let dt_max = cfg.dt();
    let cap = cfg.mass_cap();
    let initial = cfg.x0.on_lattice(h);
    let mut lat = Lattice {
        first: 0,
        m: Vec::new(),
        buf: Vec::new(),
    };
    if let (Some(lo), Some(hi)) = (initial.iter().map(|p| p.0).min(), initial.iter().map(|p| p.0).max()) {
        lat.first = lo - (MARGIN + GROW) as i64;
        lat.m = vec![0.0; (hi - lo) as usize + 1 + 2 * (MARGIN + GROW)];
        for (i, m) in &initial {
            lat.m[(i - lat.first) as usize] += m;
        }
        lat.buf = vec![0.0; lat.m.len()];
    }
    let mut max_right = f64::NEG_INFINITY;
    let mut clips: u64 = 0;
    let mut updates: u64 = 0;
    let mut t = 0.0;
    let steps = (cfg.t_final / dt_max).ceil().max(1.0) as usize;
    let dt = cfg.t_final / steps as f64;
    let r = 0.5 * dt / (h * h);
    if let Some((_, hi)) = lat.occupied() {
        max_right = (lat.first + hi as i64) as f64 * h;
    }
    for _ in 0..steps {
        let Some((lo, hi)) = lat.occupied() else { break };
        let (lo, hi) = lat.ensure_margin(lo, hi);
        let (a, b) = (lo - 1, hi + 1);
        match cfg.spde_scheme {
            SpdeScheme::FellerSplit => {
                for i in a..=b {
                    lat.buf[i] = lat.m[i] + r * (lat.m[i - 1] - 2.0 * lat.m[i] + lat.m[i + 1]);
                }
                for i in a..=b {
                    lat.m[i] = feller_step(lat.buf[i], dt, rng);
                }
            }
            SpdeScheme::EulerClip => {
                let noise = (dt / h).sqrt();
                for i in a..=b {
                    let x = lat.m[i] / h;
                    let lap = (lat.m[i - 1] - 2.0 * lat.m[i] + lat.m[i + 1]) / h;
                    let z: f64 = rng.sample(StandardNormal);
                    let mut next = x + r * lap + noise * x.max(0.0).sqrt() * z;
                    updates += 1;
                    if next < 0.0 {
                        next = 0.0;
                        clips += 1;
                    }
                    lat.buf[i] = h * next;
                }
                lat.m[a..=b].copy_from_slice(&lat.buf[a..=b]);
            }
        }
        t += dt;
        let mass: f64 = lat.m[a..=b].iter().sum();
        if mass > cap {
            return Err(LabError::MassExplosion {
                mass,
                initial: cfg.x0.total_mass(),
            });
        }
        if let Some(k) = lat.m[a..=b].iter().rposition(|v| *v > 0.0) {
            max_right = max_right.max((lat.first + (a + k) as i64) as f64 * h);
        }
    }
    let _ = t;
    let total_mass = lat.m.iter().sum();
    let snapshot = lattice_snapshot(h, cfg.window, lat.first, &lat.m, "X(t)")?;
    Ok(Replicate {
        snapshot,
        total_mass,
        max_right,
        clip_fraction: if updates > 0 { clips as f64 / updates as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn feller_step_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let (m, dt) = (0.3, 0.05);
        let mut s = 0.0;
        let mut zeros = 0;
        for _ in 0..n {
            let v = feller_step(m, dt, &mut rng);
            s += v;
            if v == 0.0 {
                zeros += 1;
            }
        }
        let mean = s / n as f64;
        // Variance of the mass after dt is m dt.
        let se = (m * dt / n as f64).sqrt();
        assert!((mean - m).abs() < 4.0 * se, "mean {mean}");
        let p0 = (-2.0 * m / dt).exp();
        let se0 = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - p0).abs() < 4.0 * se0 + 1e-6);
    }
}
