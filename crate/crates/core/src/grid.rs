//! Real-valued functions sampled on a uniform one-dimensional grid.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A function sampled at `n_points` equally spaced nodes of `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub x_min: f64,
    pub x_max: f64,
    pub values: Vec<f64>,
    pub label: String,
    /// Profiles that are non-negative by construction; tiny negative
    /// round-off is clipped on construction.
    #[serde(default)]
    pub nonnegative: bool,
}

impl GridFunction {
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(LabError::invalid("n_points", "need at least two grid points"));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(LabError::invalid("grid", format!("need x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::invalid("values", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            x_min,
            x_max,
            values,
            label: label.into(),
            nonnegative: false,
        })
    }

    /// Sample `f` on the grid.
    pub fn from_fn(
        x_min: f64,
        x_max: f64,
        n_points: usize,
        label: impl Into<String>,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if n_points < 2 {
            return Err(LabError::invalid("n_points", "need at least two grid points"));
        }
        let h = (x_max - x_min) / (n_points - 1) as f64;
        let values = (0..n_points).map(|i| f(x_min + i as f64 * h)).collect();
        Self::new(x_min, x_max, values, label)
    }

    /// Mark the function as non-negative, clipping values down to `-1e-12` to zero.
    pub fn into_nonnegative(mut self) -> Result<Self> {
        for (i, v) in self.values.iter_mut().enumerate() {
            if *v < -1e-12 {
                return Err(LabError::invalid(
                    "values",
                    format!("value {v:e} at index {i} violates non-negativity"),
                ));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.nonnegative = true;
        Ok(self)
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.values.len() - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h()
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.h();
        (0..self.values.len()).map(move |i| self.x_min + i as f64 * h)
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.h()).round();
        s.clamp(0.0, (self.values.len() - 1) as f64) as usize
    }

    /// Local cubic Lagrange interpolation; outside the grid the edge value is used.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        if x <= self.x_min {
            return self.values[0];
        }
        if x >= self.x_max {
            return self.values[n - 1];
        }
        let h = self.h();
        let s = (x - self.x_min) / h;
        let i = (s.floor() as usize).min(n - 2);
        if n < 4 {
            let w = s - i as f64;
            return self.values[i] * (1.0 - w) + self.values[i + 1] * w;
        }
        let start = i.saturating_sub(1).min(n - 4);
        let mut acc = 0.0;
        for j in 0..4 {
            let xj = (start + j) as f64;
            let mut l = 1.0;
            for k in 0..4 {
                if k != j {
                    let xk = (start + k) as f64;
                    l *= (s - xk) / (xj - xk);
                }
            }
            acc += l * self.values[start + j];
        }
        acc
    }

    /// Trapezoid integral over the whole grid.
    pub fn integral(&self) -> f64 {
        let n = self.values.len();
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.h() * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }

    /// Even extension of a profile stored on `[0, x_max]` to `[-x_max, x_max]`.
    pub fn even_extension(&self) -> Result<Self> {
        if self.x_min.abs() > 1e-12 {
            return Err(LabError::invalid("x_min", "even extension needs a grid starting at 0"));
        }
        let n = self.values.len();
        let mut values = Vec::with_capacity(2 * n - 1);
        values.extend(self.values[1..].iter().rev());
        values.extend_from_slice(&self.values);
        let mut out = Self::new(-self.x_max, self.x_max, values, self.label.clone())?;
        out.nonnegative = self.nonnegative;
        Ok(out)
    }

    /// Pointwise map, keeping the grid.
    pub fn map(&self, label: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = self.xs().zip(&self.values).map(|(x, &v)| f(x, v)).collect();
        Self::new(self.x_min, self.x_max, values, label)
    }

    pub fn scaled(&self, factor: f64, label: impl Into<String>) -> Result<Self> {
        self.map(label, |_, v| factor * v)
    }

    /// Sup-norm distance to `other`, evaluated on the nodes of `self` lying in `[a, b]`.
    pub fn sup_distance_on(&self, other: &GridFunction, a: f64, b: f64) -> f64 {
        self.xs()
            .zip(&self.values)
            .filter(|(x, _)| *x >= a - 1e-12 && *x <= b + 1e-12)
            .map(|(x, v)| (v - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Finite-difference weights for the `order`-th derivative at `x0` from the
/// given nodes (Fornberg's recursion).
pub fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

fn apply_stencil(f: &GridFunction, order: usize, label: &str) -> Result<GridFunction> {
    let n = f.n_points();
    if n < 5 {
        return Err(LabError::invalid("n_points", "derivative needs at least 5 points"));
    }
    let h = f.h();
    // Five-point stencils in units of h, shifted at the edges.
    let mut cache: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(2).min(n - 5);
        let offset = i - start;
        let w = match cache.iter().find(|(o, _)| *o == offset) {
            Some((_, w)) => w.clone(),
            None => {
                let nodes: Vec<f64> = (0..5).map(|k| k as f64).collect();
                let w = fd_weights(offset as f64, &nodes, order);
                cache.push((offset, w.clone()));
                w
            }
        };
        let s: f64 = (0..5).map(|k| w[k] * f.values[start + k]).sum();
        out.push(s / h.powi(order as i32));
    }
    GridFunction::new(f.x_min, f.x_max, out, label)
}

/// First derivative: fourth-order central differences in the interior and
/// biased five-point stencils at the two edge nodes on each side. Exact for
/// polynomials of degree four.
pub fn derivative(f: &GridFunction) -> Result<GridFunction> {
    apply_stencil(f, 1, &format!("d({})", f.label))
}

/// Second derivative with the same five-point stencil layout.
pub fn second_derivative(f: &GridFunction) -> Result<GridFunction> {
    apply_stencil(f, 2, &format!("d2({})", f.label))
}
