//! Spectrum of the killed Ornstein–Uhlenbeck operator
//! `A f = f''/2 - x f'/2 - phi f` on `L^2(m)`, `m` the standard normal law.
//!
//! Two independent discretizations: a Galerkin method in the orthonormal
//! Hermite basis, and a finite-volume Sturm–Liouville scheme on a truncated
//! interval with Neumann ends. Eigenvalues are stored as `lambda_n >= 0`; the
//! operator eigenvalue is `-lambda_n`.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;
use crate::profiles;

/// Named killing functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Zero,
    F,
    FHalf,
    G,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Zero => "zero",
            Builtin::F => "F",
            Builtin::FHalf => "F_half",
            Builtin::G => "G",
        }
    }
}

impl std::str::FromStr for Builtin {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "0" => Ok(Builtin::Zero),
            "F" | "f" => Ok(Builtin::F),
            "F_half" | "f_half" | "F/2" => Ok(Builtin::FHalf),
            "G" | "g" => Ok(Builtin::G),
            other => Err(LabError::invalid("phi", format!("unknown killing function `{other}` (zero, F, F_half, G)"))),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A killing function sampled on a grid, extended by its edge values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KillingSpec {
    pub phi: GridFunction,
    pub symmetric: bool,
    pub name: String,
}

impl KillingSpec {
    pub fn new(phi: GridFunction, symmetric: bool) -> Result<Self> {
        if let Some(v) = phi.values.iter().find(|v| **v < -1e-12) {
            return Err(LabError::invalid("phi", format!("killing function must be >= 0, found {v:e}")));
        }
        if symmetric {
            for x in phi.xs().filter(|x| x.abs() <= phi.x_max.min(-phi.x_min)) {
                let gap = (phi.eval(x) - phi.eval(-x)).abs();
                if gap > 1e-8 {
                    return Err(LabError::invalid("symmetric", format!("phi(x) != phi(-x) at x={x} (gap {gap:e})")));
                }
            }
        }
        let name = phi.label.clone();
        Ok(Self { phi, symmetric, name })
    }

    /// Build one of the named killing functions from freshly solved profiles.
    pub fn builtin(b: Builtin) -> Result<Self> {
        let phi = match b {
            Builtin::Zero => GridFunction::from_fn(-10.0, 10.0, 3, "zero", |_| 0.0)?,
            Builtin::F | Builtin::FHalf => {
                let f = profiles::solve_f(10.0, 2001, 1e-10)?.profile.even_extension()?;
                if b == Builtin::F {
                    f
                } else {
                    f.scaled(0.5, "F/2")?
                }
            }
            Builtin::G => g_profile_for_killing()?,
        };
        let mut spec = Self::new(phi, b != Builtin::G)?;
        spec.name = b.name().to_string();
        Ok(spec)
    }

    /// `phi(x)`, constant beyond the grid.
    pub fn eval(&self, x: f64) -> f64 {
        self.phi.eval(x).max(0.0)
    }
}

/// `G` on `[-10, 10]` from the shooting route, which resolves the profile
/// to ODE accuracy; the time-stepping route is cross-checked in `solve_g`.
pub fn g_profile_for_killing() -> Result<GridFunction> {
    let a = profiles::solve_g_shooting(-8.0, 9.0)?;
    let mut g = profiles::g_from_amplitude(a, -8.0, -10.0, 10.0, 4001)?;
    g.label = "G".into();
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    HermiteGalerkin,
    NeumannFd,
}

/// Eigenvalues `lambda_0 <= lambda_1 <= ...` and `L^2(m)`-normalized eigenfunctions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenResult {
    pub phi_name: String,
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenfunctions: Vec<GridFunction>,
    /// `theta_n = int psi_n dm`; `theta0 = thetas[0] > 0`.
    pub thetas: Vec<f64>,
    pub theta0: f64,
    pub method: Method,
    pub basis_size_or_n: usize,
    pub truncation_k: f64,
    /// Shift of `lambda_0` when the interval grows from `K` to `K + 1`,
    /// recorded when it exceeds `1e-4`.
    pub truncation_warning: Option<f64>,
}

impl EigenResult {
    pub fn lambda0(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn psi0(&self) -> &GridFunction {
        &self.eigenfunctions[0]
    }
}

pub const DEFAULT_BASIS: usize = 120;
pub const DEFAULT_QUADRATURE_NODES: usize = 300;
pub const DEFAULT_K: f64 = 8.0;
pub const DEFAULT_FD_N: usize = 2000;
/// Number of eigenfunctions sampled on a grid.
const KEEP_EIGENFUNCTIONS: usize = 8;
/// The killing function must be known on this window; outside it the
/// Gaussian weight makes the edge extension immaterial.
const COVERAGE: f64 = 6.0;

/// Gauss–Hermite rule for the standard normal law (Golub–Welsch).
///
/// Returns the nodes in increasing order, the weights (summing to one), and
/// the eigenvector matrix `V` with `V[(n, k)] = sqrt(w_k) h_n(x_k)` where
/// `h_n` are the orthonormal probabilists' Hermite polynomials.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let nodes: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut v = DMatrix::zeros(n, n);
    let mut weights = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        let s = if eig.eigenvectors[(0, k)] < 0.0 { -1.0 } else { 1.0 };
        for row in 0..n {
            v[(row, col)] = s * eig.eigenvectors[(row, k)];
        }
        weights.push(v[(0, col)] * v[(0, col)]);
    }
    (nodes, weights, v)
}

/// Orthonormal Hermite polynomials `h_0..h_{count-1}` at `x`.
pub fn hermite_values(x: f64, count: usize) -> Vec<f64> {
    let mut h = vec![0.0; count];
    if count > 0 {
        h[0] = 1.0;
    }
    if count > 1 {
        h[1] = x;
    }
    for n in 1..count.saturating_sub(1) {
        h[n + 1] = (x * h[n] - (n as f64).sqrt() * h[n - 1]) / ((n + 1) as f64).sqrt();
    }
    h
}

fn check_coverage(spec: &KillingSpec) -> Result<()> {
    let (lo, hi) = (spec.phi.x_min, spec.phi.x_max);
    let lo_ok = lo <= -COVERAGE || (spec.symmetric && lo.abs() < 1e-12);
    if !lo_ok || hi < COVERAGE {
        return Err(LabError::QuadratureUnderflow { lo, hi, needed: COVERAGE });
    }
    Ok(())
}

fn grid_phi(spec: &KillingSpec, x: f64) -> f64 {
    if spec.symmetric && spec.phi.x_min.abs() < 1e-12 {
        spec.eval(x.abs())
    } else {
        spec.eval(x)
    }
}

/// Galerkin discretization in the first `basis_size` Hermite functions, with
/// the killing matrix computed by a Gauss–Hermite rule of `DEFAULT_QUADRATURE_NODES`
/// (or `2 basis_size`, if larger) nodes.
pub fn eig_hermite(spec: &KillingSpec, basis_size: usize) -> Result<EigenResult> {
    eig_hermite_with(spec, basis_size, DEFAULT_QUADRATURE_NODES.max(2 * basis_size))
}

pub fn eig_hermite_with(spec: &KillingSpec, basis_size: usize, nodes: usize) -> Result<EigenResult> {
    if !(20..=400).contains(&basis_size) {
        return Err(LabError::invalid("basis_size", format!("must lie in [20, 400], got {basis_size}")));
    }
    if nodes < 2 * basis_size {
        return Err(LabError::invalid("nodes", format!("need at least 2 x basis_size = {}", 2 * basis_size)));
    }
    check_coverage(spec)?;
    let (xq, _, v) = gauss_hermite(nodes);
    let phi_q: Vec<f64> = xq.iter().map(|&x| grid_phi(spec, x)).collect();
    let b = basis_size;
    // Killing matrix <phi h_i, h_j> = sum_k V[i,k] phi(x_k) V[j,k]; exact for
    // polynomial phi of degree < 2 nodes - 2 basis_size + 1.
    let vb = v.rows(0, b);
    let mut scaled = vb.clone_owned();
    for (k, p) in phi_q.iter().enumerate() {
        scaled.column_mut(k).scale_mut(*p);
    }
    let mut m = &scaled * vb.transpose();
    for n in 0..b {
        m[(n, n)] += 0.5 * n as f64;
    }
    m = 0.5 * (&m + m.transpose());
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut coeffs: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    for c in coeffs.iter_mut() {
        // Fix signs: positive mean, or a positive first nonzero coefficient.
        let pivot = c.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
        let s = if c[0].abs() > 1e-12 { c[0].signum() } else { pivot.signum() };
        c.iter_mut().for_each(|v| *v *= s);
    }
    let thetas: Vec<f64> = coeffs.iter().map(|c| c[0]).collect();

    let k = DEFAULT_K;
    let grid_n = 1601;
    let hgrid = 2.0 * k / (grid_n - 1) as f64;
    let basis_on_grid: Vec<Vec<f64>> = (0..grid_n).map(|i| hermite_values(-k + i as f64 * hgrid, b)).collect();
    let mut eigenfunctions = Vec::new();
    for (n, c) in coeffs.iter().enumerate().take(KEEP_EIGENFUNCTIONS) {
        let values = basis_on_grid
            .iter()
            .map(|h| h.iter().zip(c).map(|(a, b)| a * b).sum())
            .collect();
        eigenfunctions.push(GridFunction::new(-k, k, values, format!("psi_{n}^{}", spec.name))?);
    }
    Ok(EigenResult {
        phi_name: spec.name.clone(),
        theta0: thetas[0],
        thetas,
        eigenvalues,
        eigenfunctions,
        method: Method::HermiteGalerkin,
        basis_size_or_n: b,
        truncation_k: k,
        truncation_warning: None,
    })
}

/// Symmetric tridiagonal matrix with diagonal `d` and off-diagonal `e`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl Tridiagonal {
    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.d.len();
        let mut count = 0;
        let mut q = self.d[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let denom = if q == 0.0 { f64::EPSILON * (1.0 + x.abs()) } else { q };
            q = self.d[i] - x - self.e[i - 1] * self.e[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.d.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.e[i].abs() } else { 0.0 };
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue by bisection.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs());
        while hi - lo > 4.0 * f64::EPSILON * scale {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve `(T - sigma) y = b` by Gaussian elimination with partial pivoting.
    fn shifted_solve(&self, sigma: f64, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut d: Vec<f64> = self.d.iter().map(|d| d - sigma).collect();
        let mut du = self.e.clone();
        let dl = self.e.clone();
        let mut du2 = vec![0.0; n];
        let mut rhs = b.to_vec();
        let tiny = f64::EPSILON * self.gershgorin().1.abs().max(1.0);
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < tiny {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                rhs[i + 1] -= fact * rhs[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                let r = rhs[i];
                rhs[i] = rhs[i + 1];
                rhs[i + 1] = r - fact * rhs[i + 1];
            }
        }
        if d[n - 1].abs() < tiny {
            d[n - 1] = tiny;
        }
        let mut y = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = rhs[i];
            if i + 1 < n {
                s -= du[i] * y[i + 1];
            }
            if i + 2 < n {
                s -= du2[i] * y[i + 2];
            }
            y[i] = s / d[i];
        }
        y
    }

    /// Unit eigenvector for an eigenvalue estimate, by inverse iteration,
    /// orthogonalized against `previous`.
    pub fn eigenvector(&self, lambda: f64, previous: &[Vec<f64>]) -> Vec<f64> {
        let n = self.d.len();
        let mut y: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
        for _ in 0..4 {
            for p in previous {
                let dot: f64 = p.iter().zip(&y).map(|(a, b)| a * b).sum();
                y.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.iter_mut().for_each(|v| *v /= norm);
            y = self.shifted_solve(lambda, &y);
        }
        for p in previous {
            let dot: f64 = p.iter().zip(&y).map(|(a, b)| a * b).sum();
            y.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        y
    }
}

struct FdSystem {
    xs: Vec<f64>,
    /// Cell masses under `m`.
    mass: Vec<f64>,
    matrix: Tridiagonal,
}

fn fd_system(spec: &KillingSpec, k: f64, n: usize) -> FdSystem {
    let lo = if spec.symmetric { 0.0 } else { -k };
    let h = (k - lo) / n as f64;
    let norm = if spec.symmetric { 2.0 } else { 1.0 } / (2.0 * std::f64::consts::PI).sqrt();
    let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    let w = |x: f64| norm * (-0.5 * x * x).exp();
    let mass: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == 0 || i == n { 0.5 * h * w(x) } else { h * w(x) })
        .collect();
    // Flux coefficients (1/2) w(x_{i+1/2}) / h.
    let flux: Vec<f64> = (0..n).map(|i| 0.5 * w(xs[i] + 0.5 * h) / h).collect();
    let mut d = vec![0.0; n + 1];
    let mut e = vec![0.0; n];
    for i in 0..=n {
        let mut s = grid_phi(spec, xs[i]) * mass[i];
        if i > 0 {
            s += flux[i - 1];
        }
        if i < n {
            s += flux[i];
        }
        d[i] = s / mass[i];
    }
    for i in 0..n {
        e[i] = -flux[i] / (mass[i] * mass[i + 1]).sqrt();
    }
    FdSystem {
        xs,
        mass,
        matrix: Tridiagonal { d, e },
    }
}

/// Finite-volume discretization on `[0, K]` (symmetric killing; even
/// eigenfunctions only) or `[-K, K]`, with `n` cells and Neumann ends.
pub fn eig_neumann_fd(spec: &KillingSpec, k: f64, n: usize) -> Result<EigenResult> {
    eig_neumann_fd_with(spec, k, n, KEEP_EIGENFUNCTIONS)
}

pub fn eig_neumann_fd_with(spec: &KillingSpec, k: f64, n: usize, count: usize) -> Result<EigenResult> {
    if !(k >= 6.0) {
        return Err(LabError::invalid("K", format!("need K >= 6, got {k}")));
    }
    if n < 10 {
        return Err(LabError::invalid("n", "need at least 10 cells"));
    }
    if count == 0 || count > n {
        return Err(LabError::invalid("count", "need 1 <= count <= n"));
    }
    let sys = fd_system(spec, k, n);
    let mut eigenvalues = Vec::with_capacity(count);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        let lam = sys.matrix.eigenvalue(j);
        let y = sys.matrix.eigenvector(lam, &vectors);
        eigenvalues.push(lam);
        vectors.push(y);
    }
    let mut eigenfunctions = Vec::new();
    let mut thetas = Vec::new();
    for (j, y) in vectors.iter().enumerate() {
        let mut u: Vec<f64> = y.iter().zip(&sys.mass).map(|(v, m)| v / m.sqrt()).collect();
        let mut theta: f64 = u.iter().zip(&sys.mass).map(|(a, m)| a * m).sum();
        let s = if theta.abs() > 1e-10 {
            theta.signum()
        } else {
            u.iter().copied().find(|v| v.abs() > 1e-10).unwrap_or(1.0).signum()
        };
        u.iter_mut().for_each(|v| *v *= s);
        theta *= s;
        thetas.push(theta);
        let label = format!("psi_{j}^{}", spec.name);
        let lo = sys.xs[0];
        let f = GridFunction::new(lo, k, u, label)?;
        eigenfunctions.push(if spec.symmetric { f.even_extension()? } else { f });
    }
    let lambda0 = eigenvalues[0];
    let h = k / n as f64 * if spec.symmetric { 1.0 } else { 2.0 };
    let n_ext = ((k + 1.0 - if spec.symmetric { 0.0 } else { -(k + 1.0) }) / h).round() as usize;
    let wider = fd_system(spec, k + 1.0, n_ext).matrix.eigenvalue(0);
    let shift = (wider - lambda0).abs();
    Ok(EigenResult {
        phi_name: spec.name.clone(),
        theta0: thetas[0],
        thetas,
        eigenvalues,
        eigenfunctions,
        method: Method::NeumannFd,
        basis_size_or_n: n,
        truncation_k: k,
        truncation_warning: (shift > 1e-4).then_some(shift),
    })
}

/// Hausdorff dimension `2 - 2 lambda0` of the zero-set boundary.
pub fn dimension_from_lambda0(lambda0: f64) -> Result<f64> {
    if !(lambda0 > 0.5 && lambda0 < 1.0) {
        return Err(LabError::OutOfRange(lambda0));
    }
    Ok(2.0 - 2.0 * lambda0)
}

/// Monte Carlo survival probability of the killed OU process started from
/// `m`, against the spectral prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalCheck {
    pub t: f64,
    pub samples: usize,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    /// Leading order `theta0^2 e^{-lambda0 t}`.
    pub spectral_prediction: f64,
    /// `sum_n theta_n^2 e^{-lambda_n t}` over the computed spectrum.
    pub full_prediction: f64,
    /// `(mc - spectral_prediction) / stderr`.
    pub z_score: f64,
    /// `(mc - full_prediction) / stderr`.
    pub z_full: f64,
}

pub const DEFAULT_SURVIVAL_DT: f64 = 5e-3;

/// Simulate `Y` from stationarity with exact OU transitions on a time grid
/// of step `dt`, and estimate `P(rho > t) = E exp(-int_0^t phi(Y_s) ds)`
/// (the conditional survival probability given the path, integral by the
/// trapezoid rule). Replicates are split into fixed chunks, each with its
/// own generator, so results do not depend on the thread count.
pub fn survival_probability_check(
    spec: &KillingSpec,
    eig: &EigenResult,
    t: f64,
    mc_samples: usize,
    seed: u64,
    dt: f64,
) -> Result<SurvivalCheck> {
    if !(t > 0.0) || !(dt > 0.0) || mc_samples < 2 {
        return Err(LabError::invalid("t", "need t > 0, dt > 0 and at least two samples"));
    }
    let steps = (t / dt).ceil() as usize;
    let dt = t / steps as f64;
    let decay = (-0.5 * dt).exp();
    let noise = (1.0 - (-dt).exp()).sqrt();
    const CHUNK: usize = 1024;
    let chunks = mc_samples.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(mc_samples - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let mut y: f64 = rng.sample(StandardNormal);
                let mut prev = grid_phi(spec, y);
                let mut integral = 0.0;
                for _ in 0..steps {
                    let z: f64 = rng.sample(StandardNormal);
                    y = y * decay + noise * z;
                    let cur = grid_phi(spec, y);
                    integral += 0.5 * dt * (prev + cur);
                    prev = cur;
                }
                let p = (-integral).exp();
                s1 += p;
                s2 += p * p;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = mc_samples as f64;
    let mean = s1 / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let stderr = (var / n).sqrt();
    let spectral_prediction = eig.theta0 * eig.theta0 * (-eig.lambda0() * t).exp();
    let full_prediction = eig
        .thetas
        .iter()
        .zip(&eig.eigenvalues)
        .map(|(th, l)| th * th * (-l * t).exp())
        .sum();
    let z = |pred: f64| {
        if stderr > 0.0 {
            (mean - pred) / stderr
        } else if (mean - pred).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok(SurvivalCheck {
        t,
        samples: mc_samples,
        mc_estimate: mean,
        mc_stderr: stderr,
        spectral_prediction,
        full_prediction,
        z_score: z(spectral_prediction),
        z_full: z(full_prediction),
    })
}

/// `L^2(m)` inner product of two grid functions on a common grid.
pub fn inner_product_m(a: &GridFunction, b: &GridFunction) -> f64 {
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let prod = a
        .map("prod", |x, v| v * b.eval(x) * c * (-0.5 * x * x).exp())
        .expect("finite product");
    prod.integral()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (x, w, _) = gauss_hermite(40);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn eigenvector_matrix_holds_hermite_values() {
        let (x, w, v) = gauss_hermite(30);
        for k in [0, 7, 15, 29] {
            let h = hermite_values(x[k], 30);
            for n in [0, 1, 5, 12] {
                assert!((v[(n, k)] - w[k].sqrt() * h[n]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn sturm_count_on_small_matrix() {
        // Eigenvalues of tridiag(-1, 2, -1) of size 4: 2 - 2 cos(k pi / 5).
        let t = Tridiagonal {
            d: vec![2.0; 4],
            e: vec![-1.0; 3],
        };
        for k in 0..4 {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 5.0).cos();
            assert!((t.eigenvalue(k) - exact).abs() < 1e-13);
        }
        assert_eq!(t.count_below(1.0), 1);
        let v = t.eigenvector(t.eigenvalue(0), &[]);
        let s = (std::f64::consts::PI / 5.0).sin();
        let expect = (2.0 * std::f64::consts::PI / 5.0).sin() / s;
        assert!((v[1] / v[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn dimension_arithmetic() {
        assert!((dimension_from_lambda0(0.75).unwrap() - 0.5).abs() < 1e-15);
        assert!((dimension_from_lambda0(0.9999).unwrap() - 0.0002).abs() < 1e-12);
        assert!(matches!(dimension_from_lambda0(0.5), Err(LabError::OutOfRange(_))));
        assert!(matches!(dimension_from_lambda0(1.2), Err(LabError::OutOfRange(_))));
    }

    #[test]
    fn builtin_names_parse() {
        assert_eq!("F_half".parse::<Builtin>().unwrap(), Builtin::FHalf);
        assert!("H".parse::<Builtin>().is_err());
    }

    #[test]
    fn narrow_killing_grid_is_rejected() {
        let phi = GridFunction::from_fn(-3.0, 3.0, 61, "bump", |x| (-x * x).exp()).unwrap();
        let spec = KillingSpec::new(phi, true).unwrap();
        assert!(matches!(eig_hermite(&spec, 40), Err(LabError::QuadratureUnderflow { .. })));
    }
}
