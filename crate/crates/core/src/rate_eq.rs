//! Mean-field rate equations `a' = -k_a a^2`, `b' = -k_b a b`.
//!
//! With `k_a = lambda_A, k_b = lambda_B` these are the naive equations; with
//! `k_a = p_A lambda_A, k_b = p_B lambda_B` the modified ones.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Closed-form solution of the rate equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEqSolution {
    pub a0: f64,
    pub b0: f64,
    pub k_a: f64,
    pub k_b: f64,
}

/// `a(t) = 1 / (1/a0 + k_a t)` and `b(t) = b0 (1 + a0 k_a t)^(-k_b/k_a)`,
/// or `b(t) = b0 exp(-k_b a0 t)` when `k_a = 0`.
pub fn closed_form(a0: f64, b0: f64, k_a: f64, k_b: f64) -> Result<RateEqSolution> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !(a0 > 0.0 && a0.is_finite() && b0 > 0.0 && b0.is_finite()) {
        return Err(invalid("initial densities must be positive and finite"));
    }
    if !ok(k_a) || !ok(k_b) {
        return Err(invalid("rate coefficients must be finite and non-negative"));
    }
    Ok(RateEqSolution { a0, b0, k_a, k_b })
}

impl RateEqSolution {
    pub fn a(&self, t: f64) -> f64 {
        1.0 / (1.0 / self.a0 + self.k_a * t)
    }

    pub fn b(&self, t: f64) -> f64 {
        if self.k_a == 0.0 {
            self.b0 * libm::exp(-self.k_b * self.a0 * t)
        } else {
            self.b0 * libm::exp(-self.exponent() * libm::log1p(self.a0 * self.k_a * t))
        }
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        (self.a(t), self.b(t))
    }

    /// Decay exponent `k_b / k_a` of b (infinite when `k_a = 0 < k_b`).
    pub fn exponent(&self) -> f64 {
        if self.k_b == 0.0 {
            0.0
        } else {
            self.k_b / self.k_a
        }
    }

    /// Right-hand side of the equations.
    pub fn rhs(&self, a: f64, b: f64) -> (f64, f64) {
        (-self.k_a * a * a, -self.k_b * a * b)
    }
}

/// Compensated values `(t a(t), t^theta b(t))`, which tend to `1/k_a` and
/// `b0 (a0 k_a)^-theta`.
pub fn asymptote_check(sol: &RateEqSolution, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(invalid("asymptote check needs t > 0"));
    }
    let theta = sol.exponent();
    Ok((t * sol.a(t), libm::pow(t, theta) * sol.b(t)))
}

fn rk4_step(sol: &RateEqSolution, y: (f64, f64), h: f64) -> (f64, f64) {
    let f = |y: (f64, f64)| sol.rhs(y.0, y.1);
    let k1 = f(y);
    let k2 = f((y.0 + 0.5 * h * k1.0, y.1 + 0.5 * h * k1.1));
    let k3 = f((y.0 + 0.5 * h * k2.0, y.1 + 0.5 * h * k2.1));
    let k4 = f((y.0 + h * k3.0, y.1 + h * k3.1));
    (
        y.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        y.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Per-step relative error target of the step-doubling controller.
const STEP_TOL: f64 = 1e-13;

/// Integrate the equations with classical RK4 and step-doubling control,
/// reporting `(a, b)` at every point of `grid` (non-decreasing, from 0).
pub fn integrate_numeric(a0: f64, b0: f64, k_a: f64, k_b: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let sol = closed_form(a0, b0, k_a, k_b)?;
    if grid.first().is_some_and(|&t| t != 0.0) || grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(invalid("time grid must start at 0 and be non-decreasing"));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut y = (a0, b0);
    let mut t = 0.0;
    let mut h = 1e-3 / (1.0 + k_a * a0 + k_b * a0);
    for &target in grid {
        while t < target {
            let step = h.min(target - t);
            let full = rk4_step(&sol, y, step);
            let half = rk4_step(&sol, rk4_step(&sol, y, 0.5 * step), 0.5 * step);
            let scale = |v: f64| v.abs().max(1e-300);
            let err = ((full.0 - half.0).abs() / scale(half.0)).max((full.1 - half.1).abs() / scale(half.1));
            if err <= STEP_TOL {
                // Richardson: the two-half-step result plus its error estimate.
                y = (half.0 + (half.0 - full.0) / 15.0, half.1 + (half.1 - full.1) / 15.0);
                t += step;
                let grow = if err == 0.0 { 4.0 } else { (0.9 * libm::pow(STEP_TOL / err, 0.2)).min(4.0) };
                if step == h {
                    h *= grow;
                }
            } else if step < 1e-12 * (1.0 + t) {
                return Err(Error::Numerical("step size underflow in rate-equation integration".into()));
            } else {
                h = step * (0.9 * libm::pow(STEP_TOL / err, 0.2)).max(0.1);
            }
        }
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn closed_form_examples() {
        let s = closed_form(1.0, 1.0, 1.0, 2.0).unwrap();
        assert!((s.a(1.0) - 0.5).abs() < 1e-15);
        assert!((s.b(3.0) - 0.0625).abs() < 1e-15);
        let same = closed_form(2.0, 3.0, 0.7, 0.7).unwrap();
        for t in [0.1, 1.0, 10.0] {
            assert!((same.b(t) - 3.0 * same.a(t) / 2.0).abs() < 1e-14);
        }
        let flat = closed_form(1.0, 2.0, 0.0, 0.5).unwrap();
        assert!((flat.b(2.0) - 2.0 * libm::exp(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_rhs() {
        let s = closed_form(1.3, 0.7, 0.6, 1.1).unwrap();
        let mut t = 0.01;
        while t < 1e4 {
            let h = 1e-4 * t;
            let da = (s.a(t + h) - s.a(t - h)) / (2.0 * h);
            let db = (s.b(t + h) - s.b(t - h)) / (2.0 * h);
            let (ra, rb) = s.rhs(s.a(t), s.b(t));
            assert!(((da - ra) / ra).abs() < 1e-6, "t={t}");
            assert!(((db - rb) / rb).abs() < 1e-6, "t={t}");
            t *= 1.7;
        }
    }

    #[test]
    fn compensated_values() {
        let s = closed_form(1.0, 1.0, 1.0, 2.0).unwrap();
        let (ta, tb) = asymptote_check(&s, 1e4).unwrap();
        assert!((tb - 1.0).abs() < 2e-4);
        assert!(ta < 1.0 && ta > 0.9998);
        let (ta, _) = asymptote_check(&closed_form(1.0, 1.0, 1.0, 1.0).unwrap(), 1e6).unwrap();
        assert!((ta - 0.999_999).abs() < 1e-8);
        let (ta, tb) = asymptote_check(&s, 1e-9).unwrap();
        assert!(ta < 1e-8 && tb < 1e-17);
        assert!(asymptote_check(&s, 0.0).is_err());
    }

    #[test]
    fn numeric_integration_agrees() {
        let grid: Vec<f64> = core::iter::once(0.0).chain((0..=40).map(|k| libm::pow(10.0, k as f64 / 10.0))).collect();
        let s = closed_form(1.0, 0.5, 1.0, 1.75).unwrap();
        let num = integrate_numeric(1.0, 0.5, 1.0, 1.75, &grid).unwrap();
        for (t, (a, b)) in grid.iter().zip(num) {
            assert!(((a - s.a(*t)) / s.a(*t)).abs() < 1e-8);
            assert!(((b - s.b(*t)) / s.b(*t)).abs() < 1e-8);
        }
    }

    #[test]
    fn trivial_grids() {
        assert_eq!(integrate_numeric(1.0, 2.0, 1.0, 1.0, &[0.0]).unwrap(), vec![(1.0, 2.0)]);
        let flat = integrate_numeric(1.0, 2.0, 1.0, 0.0, &[0.0, 5.0, 50.0]).unwrap();
        assert!(flat.iter().all(|&(_, b)| b == 2.0));
        assert!(integrate_numeric(1.0, 2.0, 1.0, 0.0, &[1.0]).is_err());
    }
}
