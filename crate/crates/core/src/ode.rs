//! Dormand–Prince 5(4) embedded Runge–Kutta integrator for small systems.

use crate::error::{LabError, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// What the caller wants after each accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Adaptive integrator with mixed absolute/relative error control.
#[derive(Debug, Clone, Copy)]
pub struct DormandPrince {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for DormandPrince {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

impl DormandPrince {
    /// Integrate `y' = f(x, y)` from `x0` to `x1` (either direction),
    /// calling `on_step(x, y)` after every accepted step. Returns the final
    /// abscissa and state; the final abscissa is `x1` unless the callback stopped early.
    pub fn integrate<const N: usize>(
        &self,
        f: impl Fn(f64, &[f64; N]) -> [f64; N],
        x0: f64,
        y0: [f64; N],
        x1: f64,
        mut on_step: impl FnMut(f64, &[f64; N]) -> Control,
    ) -> Result<(f64, [f64; N])> {
        let dir = if x1 >= x0 { 1.0 } else { -1.0 };
        let span = (x1 - x0).abs();
        let mut x = x0;
        let mut y = y0;
        if span == 0.0 {
            return Ok((x, y));
        }
        let mut h = (span * 1e-3).min(1e-2);
        let mut k = [[0.0; N]; 7];
        k[0] = f(x, &y);
        for _ in 0..self.max_steps {
            let remaining = (x1 - x) * dir;
            if remaining <= 0.0 {
                return Ok((x, y));
            }
            if h > remaining {
                h = remaining;
            }
            let mut y_stage;
            for s in 1..7 {
                y_stage = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        for i in 0..N {
                            y_stage[i] += dir * h * a * kj[i];
                        }
                    }
                }
                k[s] = f(x + dir * C[s] * h, &y_stage);
            }
            let mut y5 = y;
            let mut err = 0.0f64;
            for i in 0..N {
                let mut d5 = 0.0;
                let mut d4 = 0.0;
                for s in 0..7 {
                    d5 += B5[s] * k[s][i];
                    d4 += B4[s] * k[s][i];
                }
                y5[i] = y[i] + dir * h * d5;
                let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
                let e = h * (d5 - d4) / sc;
                err = err.max(e.abs());
            }
            if !err.is_finite() {
                h *= 0.2;
                if h < self.h_min {
                    return Err(LabError::StiffnessFailure { x, h });
                }
                continue;
            }
            if err <= 1.0 {
                x += dir * h;
                if (x1 - x) * dir < 1e-15 * span {
                    x = x1;
                }
                y = y5;
                // FSAL: last stage is the derivative at the new point.
                k[0] = k[6];
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= fac;
                if on_step(x, &y) == Control::Stop {
                    return Ok((x, y));
                }
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h < self.h_min {
                    return Err(LabError::StiffnessFailure { x, h });
                }
            }
        }
        Err(LabError::StiffnessFailure { x, h })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let dp = DormandPrince::default();
        let (x, y) = dp
            .integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 3.0, |_, _| Control::Continue)
            .unwrap();
        assert_eq!(x, 3.0);
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_backwards() {
        let dp = DormandPrince::default();
        let (_, y) = dp
            .integrate(
                |_, y: &[f64; 2]| [y[1], -y[0]],
                0.0,
                [0.0, 1.0],
                -2.0,
                |_, _| Control::Continue,
            )
            .unwrap();
        assert!((y[0] - (-2.0f64).sin()).abs() < 1e-9);
        assert!((y[1] - (-2.0f64).cos()).abs() < 1e-9);
    }

    #[test]
    fn callback_can_stop_early() {
        let dp = DormandPrince::default();
        let (x, _) = dp
            .integrate(
                |_, _: &[f64; 1]| [1.0],
                0.0,
                [0.0],
                10.0,
                |_, y| if y[0] > 1.0 { Control::Stop } else { Control::Continue },
            )
            .unwrap();
        assert!(x > 1.0 && x < 10.0);
    }
}
