//! Box-counting estimate for the boundary of `{x : X(t, x) > 0}`.
//!
//! This is a box dimension of a thresholded grid set, an exploratory
//! stand-in for the Hausdorff dimension of the continuum boundary.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;
use crate::stats::{self, PowerLawFit};

/// Grid indices whose closed neighbourhood `{i-1, i, i+1}` contains both a
/// value `<= threshold` and a value `> threshold`.
pub fn boundary_cells(s: &GridFunction, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0) {
        return Err(LabError::invalid("threshold", "must be positive"));
    }
    let n = s.n_points();
    let above: Vec<bool> = s.values.iter().map(|v| *v > threshold).collect();
    Ok((0..n)
        .filter(|&i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let nb = &above[lo..=hi];
            nb.iter().any(|a| *a) && nb.iter().any(|a| !*a)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxCountResult {
    pub eps_ladder: Vec<f64>,
    pub counts: Vec<usize>,
    /// Fit of `ln N` against `-ln eps`; the exponent is the dimension estimate.
    pub fit: PowerLawFit,
    pub threshold_used: f64,
}

impl BoxCountResult {
    pub fn dimension(&self) -> f64 {
        self.fit.exponent
    }
}

/// Number of boxes `[k eps, (k+1) eps)` containing at least one point.
pub fn box_count(points: &[f64], eps: f64) -> usize {
    points
        .iter()
        .map(|x| (x / eps).floor() as i64)
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn box_dimension_of_points(points: &[f64], eps_ladder: &[f64], threshold_used: f64) -> Result<BoxCountResult> {
    if eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(LabError::invalid("eps_ladder", "box sizes must be positive"));
    }
    let counts: Vec<usize> = eps_ladder.iter().map(|&e| box_count(points, e)).collect();
    let usable = counts.iter().filter(|&&c| c >= 2).count();
    if usable < 3 {
        return Err(LabError::DegenerateFit(format!(
            "only {usable} ladder points have at least two occupied boxes"
        )));
    }
    let inv: Vec<f64> = eps_ladder.iter().map(|e| 1.0 / e).collect();
    let n: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let fit = stats::power_law_fit(&inv, &n)?;
    Ok(BoxCountResult {
        eps_ladder: eps_ladder.to_vec(),
        counts,
        fit,
        threshold_used,
    })
}

/// Box dimension of the boundary cells of a snapshot.
pub fn box_dimension(s: &GridFunction, eps_ladder: &[f64], threshold: f64) -> Result<BoxCountResult> {
    let h = s.h();
    let scales = eps_ladder.iter().filter(|e| **e > h * (1.0 + 1e-9)).count();
    if scales < 4 {
        return Err(LabError::invalid("eps_ladder", "need at least four box sizes above the grid spacing"));
    }
    let points: Vec<f64> = boundary_cells(s, threshold)?.into_iter().map(|i| s.x(i)).collect();
    box_dimension_of_points(&points, eps_ladder, threshold)
}

/// Dyadic box sizes `h 2^k` for `k = 1..=levels`.
pub fn dyadic_ladder(h: f64, levels: u32) -> Vec<f64> {
    (1..=levels).map(|k| h * 2f64.powi(k as i32)).collect()
}

/// Fitted dimension at `threshold` and `threshold / 2`, flagged unreliable
/// when they differ by `0.05` or more.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustDimension {
    pub result: BoxCountResult,
    pub half_threshold_dimension: f64,
    pub reliable: bool,
}

pub fn robust_box_dimension(s: &GridFunction, eps_ladder: &[f64], threshold: f64) -> Result<RobustDimension> {
    let result = box_dimension(s, eps_ladder, threshold)?;
    let half = box_dimension(s, eps_ladder, 0.5 * threshold)?.dimension();
    Ok(RobustDimension {
        reliable: (half - result.dimension()).abs() < 0.05,
        half_threshold_dimension: half,
        result,
    })
}

/// Left endpoints of the `2^depth` intervals of the middle-thirds Cantor
/// construction at level `depth`, with their right endpoints.
pub fn cantor_points(depth: u32) -> Vec<f64> {
    let mut intervals = vec![(0.0f64, 1.0f64)];
    for _ in 0..depth {
        intervals = intervals
            .iter()
            .flat_map(|&(a, b)| {
                let w = (b - a) / 3.0;
                [(a, a + w), (b - w, b)]
            })
            .collect();
    }
    intervals.iter().flat_map(|&(a, b)| [a, b]).collect()
}
