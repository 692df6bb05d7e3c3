//! Statistics of simulated snapshots near the right edge of the support:
//! local-time approximants, the point `tau^eps` with `eps` mass to its right,
//! and the right-mass tail probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;
use crate::stats::{self, PowerLawFit};

/// Density `lambda^{2 lambda0} X e^{-lambda X}` of the local-time approximant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalTimeApprox {
    pub lambda: f64,
    pub lambda0_used: f64,
    pub measure: GridFunction,
    pub total: f64,
}

pub fn local_time_approx(snapshot: &GridFunction, lambda: f64, lambda0: f64) -> Result<LocalTimeApprox> {
    if !(lambda > 0.0) {
        return Err(LabError::invalid("lambda", "must be positive"));
    }
    if let Some(v) = snapshot.values.iter().find(|v| **v < -1e-12) {
        return Err(LabError::invalid("snapshot", format!("density must be >= 0, found {v:e}")));
    }
    let c = lambda.powf(2.0 * lambda0);
    let measure = snapshot.map(format!("L^{lambda}"), |_, x| {
        let x = x.max(0.0);
        c * x * (-lambda * x).exp()
    })?;
    let total = measure.integral();
    Ok(LocalTimeApprox {
        lambda,
        lambda0_used: lambda0,
        measure,
        total,
    })
}

/// Mean `L^1` distance between approximants at consecutive ladder points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stabilization {
    pub lambdas: Vec<f64>,
    /// `distances[i]` compares `lambdas[i]` and `lambdas[i + 1]`.
    pub distances: Vec<f64>,
    /// Index from which the distances decrease monotonically, if any pair
    /// at the end of the ladder decreases.
    pub decreasing_from: Option<usize>,
}

pub fn local_time_stabilization(snapshots: &[GridFunction], ladder: &[f64], lambda0: f64) -> Result<Stabilization> {
    if ladder.len() < 2 {
        return Err(LabError::invalid("ladder", "need at least two lambda values"));
    }
    if ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::invalid("ladder", "must be increasing"));
    }
    let mut distances = vec![0.0; ladder.len() - 1];
    for s in snapshots {
        let approx: Vec<LocalTimeApprox> = ladder
            .iter()
            .map(|&l| local_time_approx(s, l, lambda0))
            .collect::<Result<_>>()?;
        for (d, w) in distances.iter_mut().zip(approx.windows(2)) {
            let diff = w[0].measure.map("diff", |x, v| (v - w[1].measure.eval(x)).abs())?;
            *d += diff.integral();
        }
    }
    if !snapshots.is_empty() {
        distances.iter_mut().for_each(|d| *d /= snapshots.len() as f64);
    }
    let mut decreasing_from = None;
    if distances.len() >= 2 {
        let mut k = distances.len() - 1;
        while k > 0 && distances[k] < distances[k - 1] {
            k -= 1;
        }
        if k < distances.len() - 1 {
            decreasing_from = Some(k);
        }
    }
    Ok(Stabilization {
        lambdas: ladder.to_vec(),
        distances,
        decreasing_from,
    })
}

/// Cell masses of a snapshot: trapezoid weights, so that the masses sum to
/// the trapezoid integral and each node carries the mass of the cell of
/// width `h` centred on it (clipped to the grid).
fn cell_masses(s: &GridFunction) -> Vec<f64> {
    let h = s.h();
    let n = s.n_points();
    s.values
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 || i == n - 1 { 0.5 * h * v } else { h * v })
        .collect()
}

/// Edge of cell `i` on its right.
fn cell_right_edge(s: &GridFunction, i: usize) -> f64 {
    if i + 1 == s.n_points() {
        s.x_max
    } else {
        s.x(i) + 0.5 * s.h()
    }
}

/// `X([x, inf))` with the density taken constant on each cell.
pub fn right_mass(s: &GridFunction, x: f64) -> f64 {
    let m = cell_masses(s);
    let h = s.h();
    let n = s.n_points();
    let mut total = 0.0;
    for i in (0..n).rev() {
        let right = cell_right_edge(s, i);
        let left = if i == 0 { s.x_min } else { s.x(i) - 0.5 * h };
        if right <= x {
            break;
        }
        if left >= x {
            total += m[i];
        } else {
            total += m[i] * (right - x) / (right - left);
            break;
        }
    }
    total
}

/// `tau^eps = inf {x : X([x, inf)) < eps}`; `None` stands for `-inf`
/// (total mass below `eps`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauEps {
    pub eps: f64,
    pub value: Option<f64>,
}

impl TauEps {
    pub fn value_or_neg_inf(&self) -> f64 {
        self.value.unwrap_or(f64::NEG_INFINITY)
    }
}

pub fn tau_eps(s: &GridFunction, eps: f64) -> Result<TauEps> {
    if !(eps > 0.0) {
        return Err(LabError::invalid("eps", "must be positive"));
    }
    let m = cell_masses(s);
    let total: f64 = m.iter().sum();
    if total < eps {
        return Ok(TauEps { eps, value: None });
    }
    let h = s.h();
    let n = s.n_points();
    // Scan from the right: mass strictly right of cell i's left edge.
    let mut acc = 0.0;
    for i in (0..n).rev() {
        if acc + m[i] >= eps {
            let right = cell_right_edge(s, i);
            let left = if i == 0 { s.x_min } else { s.x(i) - 0.5 * h };
            // Within the cell the right mass falls linearly from acc + m[i] to acc.
            let frac = (eps - acc) / m[i];
            return Ok(TauEps {
                eps,
                value: Some(right - frac * (right - left)),
            });
        }
        acc += m[i];
    }
    Ok(TauEps {
        eps,
        value: Some(s.x_min),
    })
}

/// Mean of `X([tau^eps - u, inf))` over snapshots with finite `tau^eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthResult {
    pub eps: f64,
    pub u_values: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub survivors: usize,
    pub fit: PowerLawFit,
}

pub const MIN_SURVIVORS: usize = 100;

pub fn boundary_growth_experiment(snapshots: &[GridFunction], eps: f64, u_ladder: &[f64]) -> Result<GrowthResult> {
    if u_ladder.iter().any(|u| !(*u > 0.0)) {
        return Err(LabError::invalid("u_ladder", "values must be positive"));
    }
    let mut per_u: Vec<Vec<f64>> = vec![Vec::new(); u_ladder.len()];
    let mut survivors = 0;
    for s in snapshots {
        let Some(tau) = tau_eps(s, eps)?.value else { continue };
        survivors += 1;
        for (k, &u) in u_ladder.iter().enumerate() {
            per_u[k].push(right_mass(s, tau - u));
        }
    }
    if survivors < MIN_SURVIVORS {
        return Err(LabError::InsufficientSurvivors {
            survivors,
            needed: MIN_SURVIVORS,
        });
    }
    let (means, stderrs): (Vec<f64>, Vec<f64>) = per_u.iter().map(|v| stats::mean_stderr(v)).unzip();
    let fit = stats::power_law_fit(u_ladder, &means)?;
    Ok(GrowthResult {
        eps,
        u_values: u_ladder.to_vec(),
        means,
        stderrs,
        survivors,
        fit,
    })
}

/// `P(0 < X([x, inf)) <= 1/lambda)` across a ladder of `lambda`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeftTailRow {
    pub x: f64,
    pub lambdas: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub counts: Vec<usize>,
    pub monotone: bool,
    /// Log-log fit over ladder points with a positive count.
    pub fit: Option<PowerLawFit>,
}

pub fn left_tail_experiment(snapshots: &[GridFunction], x_values: &[f64], lambda_ladder: &[f64]) -> Result<Vec<LeftTailRow>> {
    if snapshots.is_empty() {
        return Err(LabError::invalid("ensemble", "no snapshots"));
    }
    if lambda_ladder.iter().any(|l| !(*l > 0.0)) {
        return Err(LabError::invalid("lambda_ladder", "values must be positive"));
    }
    let n = snapshots.len() as f64;
    let mut rows = Vec::new();
    for &x in x_values {
        let masses: Vec<f64> = snapshots.iter().map(|s| right_mass(s, x)).collect();
        let counts: Vec<usize> = lambda_ladder
            .iter()
            .map(|&l| masses.iter().filter(|&&m| m > 0.0 && m <= 1.0 / l).count())
            .collect();
        let probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let mut order: Vec<usize> = (0..lambda_ladder.len()).collect();
        order.sort_by(|&a, &b| lambda_ladder[a].total_cmp(&lambda_ladder[b]));
        let monotone = order.windows(2).all(|w| counts[w[1]] <= counts[w[0]]);
        let fit = stats::power_law_fit(lambda_ladder, &probabilities).ok();
        rows.push(LeftTailRow {
            x,
            lambdas: lambda_ladder.to_vec(),
            probabilities,
            counts,
            monotone,
            fit,
        });
    }
    Ok(rows)
}
