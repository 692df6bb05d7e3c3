//! Profiles of the semilinear equation `v_t = v''/2 - v^2/2`.
//!
//! * `F`: the positive symmetric solution of `F''/2 + y F'/2 + F - F^2/2 = 0`
//!   with `F'(0) = 0` and `y^2 F(y) -> 0`, found by shooting on `F(0)`.
//! * `v^lambda(t, .)`: the solution with step initial data `lambda 1_{x <= 0}`,
//!   obtained by time stepping.
//! * `G = v^infinity(1, .)`: the same ODE as `F` with `G(-inf) = 2` and
//!   `x^2 G(x) -> 0` at `+inf`, computed both by time stepping and by
//!   shooting from the left asymptote.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;
use crate::ode::{Control, DormandPrince};

/// Trajectories exceeding this value are escaping to infinity.
pub const BLOWUP_CAP: f64 = 10.0;
/// Default large-lambda surrogate for the infinite initial condition.
pub const DEFAULT_INFINITY_SURROGATE: f64 = 1e6;
const SHOOTING_RTOL: f64 = 1e-10;

/// Right-hand side of the profile ODE as a first-order system in `(F, F')`.
fn profile_rhs(y: f64, s: &[f64; 2]) -> [f64; 2] {
    let (f, fp) = (s[0], s[1]);
    [fp, -y * fp - 2.0 * f + f * f]
}

fn shooting_integrator() -> DormandPrince {
    DormandPrince {
        rtol: SHOOTING_RTOL,
        atol: 1e-30,
        ..DormandPrince::default()
    }
}

/// Fate of a shooting trajectory on the integration window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fate {
    /// Went below zero.
    Negative,
    /// Reached the blow-up cap.
    BlowUp,
    /// Stayed in `[0, cap)` on the whole window.
    Bounded,
}

impl Fate {
    fn name(self) -> &'static str {
        match self {
            Fate::Negative => "negative",
            Fate::BlowUp => "blow-up",
            Fate::Bounded => "bounded",
        }
    }
}

/// Integrate the IVP `F(0) = c, F'(0) = 0` on `[0, x_max]` and classify it.
/// Returns the fate and the abscissa where the trajectory failed (or `x_max`).
pub fn classify_initial_value(c: f64, x_max: f64) -> Result<(Fate, f64)> {
    if c >= BLOWUP_CAP {
        return Ok((Fate::BlowUp, 0.0));
    }
    let mut fate = Fate::Bounded;
    let (x_end, _) = shooting_integrator().integrate(profile_rhs, 0.0, [c, 0.0], x_max, |_, s| {
        if s[0] < 0.0 {
            fate = Fate::Negative;
            Control::Stop
        } else if s[0] >= BLOWUP_CAP {
            fate = Fate::BlowUp;
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    Ok((fate, x_end))
}

/// Output of the shooting search for `F(0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShootingResult {
    pub c_star: f64,
    /// Profile on `[0, x_max]`; use [`GridFunction::even_extension`] for the full line.
    pub profile: GridFunction,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// Where the last rejected (too small) trajectory went negative.
    pub blowup_or_negativity_x: f64,
}

/// Values of the IVP at the nodes of `[x0, x_max]` with `n_points` nodes.
fn integrate_on_nodes(x0: f64, x_max: f64, n_points: usize, state0: [f64; 2]) -> Result<Vec<[f64; 2]>> {
    let h = (x_max - x0) / (n_points - 1) as f64;
    let dp = shooting_integrator();
    let mut out = Vec::with_capacity(n_points);
    let mut s = state0;
    out.push(s);
    for i in 1..n_points {
        let a = x0 + (i - 1) as f64 * h;
        let b = if i == n_points - 1 { x_max } else { x0 + i as f64 * h };
        let (_, next) = dp.integrate(profile_rhs, a, s, b, |_, _| Control::Continue)?;
        s = next;
        out.push(s);
    }
    Ok(out)
}

/// Minimal `c` such that the trajectory from `F(0) = c, F'(0) = 0` stays
/// non-negative on `[0, x_max]`, found by bisection to width `tol`.
pub fn solve_f(x_max: f64, n_points: usize, tol: f64) -> Result<ShootingResult> {
    if !(x_max >= 8.0) {
        return Err(LabError::invalid("x_max", format!("need x_max >= 8, got {x_max}")));
    }
    if !(tol > 0.0 && tol <= 1e-8) {
        return Err(LabError::invalid("tol", format!("need 0 < tol <= 1e-8, got {tol}")));
    }
    if n_points < 5 {
        return Err(LabError::invalid("n_points", "need at least 5 points"));
    }
    let (mut lo, mut hi) = (0.1, 10.0);
    let (fate_lo, mut x_fail) = classify_initial_value(lo, x_max)?;
    let (fate_hi, _) = classify_initial_value(hi, x_max)?;
    if fate_lo != Fate::Negative || fate_hi == Fate::Negative {
        return Err(LabError::BracketFailure {
            c_low: lo,
            c_high: hi,
            low: fate_lo.name(),
            high: fate_hi.name(),
        });
    }
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (fate, x) = classify_initial_value(mid, x_max)?;
        if fate == Fate::Negative {
            lo = mid;
            x_fail = x;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let states = integrate_on_nodes(0.0, x_max, n_points, [hi, 0.0])?;
    let values: Vec<f64> = states.iter().map(|s| s[0].max(0.0)).collect();
    let profile = GridFunction::new(0.0, x_max, values, "F")?.into_nonnegative()?;
    Ok(ShootingResult {
        c_star: hi,
        profile,
        bracket: (lo, hi),
        iterations,
        blowup_or_negativity_x: x_fail,
    })
}

/// Initial data for the dual PDE: a step of height `lambda`, or the infinite step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Lambda {
    Finite(f64),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Forward Euler for both diffusion and reaction; needs `dt <= h^2/2`.
    Explicit,
    /// Crank–Nicolson diffusion with Strang-split exact reaction flow.
    SemiImplicit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeRunConfig {
    pub lambda: Lambda,
    pub t_final: f64,
    pub dt: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub scheme: Scheme,
    /// Height used in place of an infinite step.
    pub infinity_surrogate: f64,
}

impl PdeRunConfig {
    pub fn new(lambda: Lambda, t_final: f64) -> Self {
        Self {
            lambda,
            t_final,
            dt: 1e-3,
            x_min: -10.0,
            x_max: 10.0,
            n_points: 2001,
            scheme: Scheme::SemiImplicit,
            infinity_surrogate: DEFAULT_INFINITY_SURROGATE,
        }
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    /// Step height actually used.
    pub fn effective_lambda(&self) -> f64 {
        match self.lambda {
            Lambda::Finite(l) => l,
            Lambda::Infinite => self.infinity_surrogate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Lambda::Finite(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(LabError::invalid("lambda", format!("need lambda > 0, got {l}")));
            }
        }
        if !(self.infinity_surrogate > 0.0 && self.infinity_surrogate.is_finite()) {
            return Err(LabError::invalid("infinity_surrogate", "must be positive and finite"));
        }
        if !(self.t_final > 0.0) {
            return Err(LabError::invalid("t_final", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(LabError::invalid("dt", "must be positive"));
        }
        if !(self.x_min < 0.0 && 0.0 < self.x_max) {
            return Err(LabError::invalid("grid", "need x_min < 0 < x_max"));
        }
        if self.n_points < 5 {
            return Err(LabError::invalid("n_points", "need at least 5 points"));
        }
        let h = self.h();
        if self.scheme == Scheme::Explicit && self.dt > 0.5 * h * h {
            return Err(LabError::invalid(
                "dt",
                format!("explicit scheme needs dt <= h^2/2 = {:e}, got {:e}", 0.5 * h * h, self.dt),
            ));
        }
        Ok(())
    }
}

/// Exact value at `x = -inf`: `2 lambda / (2 + lambda t)`.
pub fn left_limit(lambda: f64, t: f64) -> f64 {
    2.0 * lambda / (2.0 + lambda * t)
}

/// Exact flow of `v' = -v^2/2` over time `dt`.
fn reaction_flow(v: f64, dt: f64) -> f64 {
    v / (1.0 + 0.5 * v * dt)
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function: Maclaurin series of `erf` below 2,
/// Lentz continued fraction above.
pub(crate) fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        // Maclaurin series of erf.
        let mut sum = x;
        let mut term = x;
        let x2 = x * x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // Lentz continued fraction.
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for k in 1..300 {
            let a = k as f64 / 2.0;
            d = x + a * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + a / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}

/// Solve the dual PDE up to `cfg.t_final` and return `v(t_final, .)`.
///
/// Dirichlet data: `2 lambda / (2 + lambda t)` on the left, 0 on the right.
/// The first step from `t = 0` combines the exact heat semigroup applied to
/// the step with the exact reaction flow; later steps are graded
/// geometrically until they reach `cfg.dt`.
pub fn solve_v_lambda(cfg: &PdeRunConfig) -> Result<GridFunction> {
    cfg.validate()?;
    let lambda = cfg.effective_lambda();
    let n = cfg.n_points;
    let h = cfg.h();
    let xs: Vec<f64> = (0..n).map(|i| cfg.x_min + i as f64 * h).collect();

    let (t0, grading) = match cfg.scheme {
        Scheme::SemiImplicit => ((0.05 * h * h).min(cfg.dt).min(cfg.t_final), 0.02),
        Scheme::Explicit => (cfg.dt.min(cfg.t_final), f64::INFINITY),
    };
    let sd = t0.sqrt();
    let mut v: Vec<f64> = xs
        .iter()
        .map(|&x| reaction_flow(lambda * normal_cdf(-x / sd), t0))
        .collect();
    v[0] = left_limit(lambda, t0);
    v[n - 1] = 0.0;

    let mut t = t0;
    let mut work = CnWork::new(n);
    while t < cfg.t_final * (1.0 - 1e-14) {
        let mut dt = cfg.dt.min(grading * t);
        if t + dt > cfg.t_final {
            dt = cfg.t_final - t;
        }
        let t_next = t + dt;
        match cfg.scheme {
            Scheme::SemiImplicit => {
                for vi in v.iter_mut() {
                    *vi = reaction_flow(*vi, 0.5 * dt);
                }
                work.crank_nicolson(&mut v, dt, h, left_limit(lambda, t + 0.5 * dt));
                for vi in v.iter_mut() {
                    *vi = reaction_flow(*vi, 0.5 * dt);
                }
            }
            Scheme::Explicit => {
                let r = 0.5 * dt / (h * h);
                let old = v.clone();
                for i in 1..n - 1 {
                    let lap = old[i - 1] - 2.0 * old[i] + old[i + 1];
                    v[i] = old[i] + r * lap - 0.5 * dt * old[i] * old[i];
                }
            }
        }
        v[0] = left_limit(lambda, t_next);
        v[n - 1] = 0.0;
        t = t_next;
        for (i, vi) in v.iter_mut().enumerate() {
            if !vi.is_finite() || *vi < -1e-9 {
                return Err(LabError::StabilityViolation { t, x: xs[i], value: *vi });
            }
            if *vi < 0.0 {
                *vi = 0.0;
            }
        }
    }
    let label = match cfg.lambda {
        Lambda::Finite(l) => format!("v^{l}(t={})", cfg.t_final),
        Lambda::Infinite => format!("v^inf(t={})", cfg.t_final),
    };
    GridFunction::new(cfg.x_min, cfg.x_max, v, label)?.into_nonnegative()
}

struct CnWork {
    rhs: Vec<f64>,
    c_prime: Vec<f64>,
}

impl CnWork {
    fn new(n: usize) -> Self {
        Self {
            rhs: vec![0.0; n],
            c_prime: vec![0.0; n],
        }
    }

    /// One Crank–Nicolson step of `v_t = v''/2` with Dirichlet ends; the
    /// right end is 0 and the new left value is `left`.
    fn crank_nicolson(&mut self, v: &mut [f64], dt: f64, h: f64, left: f64) {
        let n = v.len();
        let r = 0.25 * dt / (h * h);
        // Interior unknowns 1..n-1; matrix diag 1+2r, off -r.
        for i in 1..n - 1 {
            self.rhs[i] = r * v[i - 1] + (1.0 - 2.0 * r) * v[i] + r * v[i + 1];
        }
        self.rhs[1] += r * left;
        self.rhs[n - 2] += r * 0.0;
        let (a, b) = (-r, 1.0 + 2.0 * r);
        self.c_prime[1] = a / b;
        self.rhs[1] /= b;
        for i in 2..n - 1 {
            let m = b - a * self.c_prime[i - 1];
            self.c_prime[i] = a / m;
            self.rhs[i] = (self.rhs[i] - a * self.rhs[i - 1]) / m;
        }
        v[n - 2] = self.rhs[n - 2];
        for i in (1..n - 2).rev() {
            v[i] = self.rhs[i] - self.c_prime[i] * v[i + 1];
        }
        v[0] = left;
        v[n - 1] = 0.0;
    }
}

/// Both routes to `G`, plus their sup-norm gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GProfile {
    /// `v^inf(1, .)` from time stepping (with the large-lambda surrogate).
    pub profile: GridFunction,
    /// Same grid, from shooting off the left asymptote `2 - A |x|^-3 e^{-x^2/2}`.
    pub shooting: GridFunction,
    pub amplitude: f64,
    pub gap: f64,
}

/// Left asymptote of `2 - G`: decaying solution of the linearization
/// `w'' + x w' - 2 w = 0` as `x -> -inf`, to leading order.
fn left_tail(x: f64) -> (f64, f64) {
    let ax = -x;
    let q = ax.powi(-3) * (-0.5 * x * x).exp();
    // d/dx [(-x)^-3 e^{-x^2/2}] = (3 (-x)^-4 - x (-x)^-3) e^{-x^2/2}
    let dq = (3.0 * ax.powi(-4) - x * ax.powi(-3)) * (-0.5 * x * x).exp();
    (q, dq)
}

/// Right-hand side for `w = 2 - G`: `w'' = -x w' + 2 w - w^2`.
fn deficit_rhs(x: f64, s: &[f64; 2]) -> [f64; 2] {
    let (w, wp) = (s[0], s[1]);
    [wp, -x * wp + 2.0 * w - w * w]
}

/// Where the shooting switches from `w = 2 - G` to `G` itself, so that
/// neither variable is computed as a difference of nearby numbers.
const G_SWITCH_X: f64 = 0.0;

/// Integrate the left-asymptote trajectory with amplitude `a` from `x_start`,
/// reporting `G` at each requested node (sorted, all `>= x_start`).
pub fn g_trajectory(
    a: f64,
    x_start: f64,
    x_end: f64,
    nodes: &[f64],
    mut sink: impl FnMut(usize, f64),
) -> Result<Fate> {
    let dp = shooting_integrator();
    let (q, dq) = left_tail(x_start);
    let mut fate = Fate::Bounded;
    let mut deficit = [a * q, a * dq];
    let mut x_cur = x_start;
    let mut next_node = 0;
    let check = |g: f64| {
        if g < 0.0 {
            Some(Fate::Negative)
        } else if g >= BLOWUP_CAP {
            Some(Fate::BlowUp)
        } else {
            None
        }
    };
    // Phase one: deficit variable up to the switch point.
    let switch = G_SWITCH_X.min(x_end);
    while next_node < nodes.len() && nodes[next_node] <= switch {
        let (_, s) = dp.integrate(deficit_rhs, x_cur, deficit, nodes[next_node], |_, _| Control::Continue)?;
        deficit = s;
        x_cur = nodes[next_node];
        sink(next_node, 2.0 - deficit[0]);
        next_node += 1;
    }
    let mut stop = None;
    let (_, s) = dp.integrate(deficit_rhs, x_cur, deficit, switch, |_, s| {
        stop = check(2.0 - s[0]);
        if stop.is_some() { Control::Stop } else { Control::Continue }
    })?;
    if let Some(f) = stop {
        return Ok(f);
    }
    x_cur = switch;
    let mut state = [2.0 - s[0], -s[1]];
    // Phase two: G itself.
    let mut targets: Vec<(Option<usize>, f64)> =
        nodes[next_node..].iter().enumerate().map(|(k, &x)| (Some(next_node + k), x)).collect();
    targets.push((None, x_end));
    for (idx, x) in targets {
        if x <= x_cur {
            if let Some(i) = idx {
                sink(i, state[0]);
            }
            continue;
        }
        let (x_reached, s) = dp.integrate(profile_rhs, x_cur, state, x, |_, s| {
            if fate == Fate::Bounded {
                if let Some(f) = check(s[0]) {
                    fate = f;
                    return Control::Stop;
                }
            }
            Control::Continue
        })?;
        if fate != Fate::Bounded {
            return Ok(fate);
        }
        state = s;
        x_cur = x_reached;
        if let Some(i) = idx {
            sink(i, state[0]);
        }
    }
    Ok(fate)
}

/// Shooting from the left: with `A` the tail amplitude, too large an `A`
/// drives the trajectory negative on the right, too small leaves a slowly
/// decaying positive tail. Bisection on `log A` for the largest admissible `A`.
pub fn solve_g_shooting(x_start: f64, x_end: f64) -> Result<f64> {
    if !(x_start < -4.0 && x_end > 4.0) {
        return Err(LabError::invalid("grid", "shooting window must contain [-4, 4]"));
    }
    let classify = |log_a: f64| g_trajectory(log_a.exp(), x_start, x_end, &[], |_, _| {});
    let (mut lo, mut hi) = (-20.0f64, 40.0f64);
    let (f_lo, f_hi) = (classify(lo)?, classify(hi)?);
    if f_lo == Fate::Negative || f_hi != Fate::Negative {
        return Err(LabError::BracketFailure {
            c_low: lo.exp(),
            c_high: hi.exp(),
            low: f_lo.name(),
            high: f_hi.name(),
        });
    }
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if classify(mid)? == Fate::Negative {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo.exp())
}

/// Evaluate the shooting solution for `G` with amplitude `a` on a grid.
pub fn g_from_amplitude(a: f64, x_start: f64, x_min: f64, x_max: f64, n_points: usize) -> Result<GridFunction> {
    let h = (x_max - x_min) / (n_points - 1) as f64;
    let xs: Vec<f64> = (0..n_points)
        .map(|i| if i == n_points - 1 { x_max } else { x_min + i as f64 * h })
        .collect();
    let mut values = vec![0.0; n_points];
    let first = xs.iter().position(|&x| x > x_start).unwrap_or(n_points);
    for i in 0..first {
        values[i] = 2.0 - a * left_tail(xs[i]).0;
    }
    g_trajectory(a, x_start, x_max, &xs[first..], |k, g| values[first + k] = g.max(0.0))?;
    GridFunction::new(x_min, x_max, values, "G (shooting)")?.into_nonnegative()
}

/// Tolerance for agreement of the two routes to `G`.
pub const G_CROSS_CHECK_TOL: f64 = 5e-3;

/// `G = v^inf(1, .)` on `[x_min, x_max]` by time stepping, cross-checked
/// against shooting from the left asymptote.
pub fn solve_g(x_min: f64, x_max: f64, n_points: usize, surrogate: f64, dt: f64) -> Result<GProfile> {
    if !(surrogate >= 1e4) {
        return Err(LabError::invalid("surrogate", format!("need >= 1e4, got {surrogate}")));
    }
    let mut cfg = PdeRunConfig::new(Lambda::Infinite, 1.0);
    cfg.x_min = x_min;
    cfg.x_max = x_max;
    cfg.n_points = n_points;
    cfg.dt = dt;
    cfg.infinity_surrogate = surrogate;
    let mut profile = solve_v_lambda(&cfg)?;
    profile.label = "G".into();
    let x_start = x_min.max(-8.0);
    let x_end = x_max.min(9.0);
    let amplitude = solve_g_shooting(x_start, x_end)?;
    let shooting = g_from_amplitude(amplitude, x_start, x_min, x_max, n_points)?;
    let gap = profile.sup_distance_on(&shooting, x_min, x_max);
    if gap > G_CROSS_CHECK_TOL {
        return Err(LabError::CrossCheckMismatch { gap, tol: G_CROSS_CHECK_TOL });
    }
    Ok(GProfile {
        profile,
        shooting,
        amplitude,
        gap,
    })
}

/// Residual of the profile ODE `u''/2 + x u'/2 + u - u^2/2` on the grid.
pub fn ode_residual(u: &GridFunction) -> Result<GridFunction> {
    let d1 = crate::grid::derivative(u)?;
    let d2 = crate::grid::second_derivative(u)?;
    let values = u
        .xs()
        .enumerate()
        .map(|(i, x)| {
            let v = u.values[i];
            0.5 * d2.values[i] + 0.5 * x * d1.values[i] + v - 0.5 * v * v
        })
        .collect();
    GridFunction::new(u.x_min, u.x_max, values, format!("residual({})", u.label))
}
