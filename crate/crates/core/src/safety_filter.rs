//! Closed-form CBF-QP for single-integrator dynamics.
//!
//! minimize `||u - u_nom||^2` subject to `grad . u >= -gamma h`. With a single
//! half-space constraint the minimizer is the orthogonal projection of `u_nom`
//! onto that half-space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput2D {
    pub vx: f64,
    pub vy: f64,
}

impl ControlInput2D {
    pub const ZERO: Self = Self { vx: 0.0, vy: 0.0 };

    pub const fn new(vx: f64, vy: f64) -> Self {
        Self { vx, vy }
    }

    pub fn norm(self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn dot(self, g: [f64; 2]) -> f64 {
        self.vx * g[0] + self.vy * g[1]
    }

    pub fn is_finite(self) -> bool {
        self.vx.is_finite() && self.vy.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Slope of the linear class-K function, 1/s.
    pub gamma: f64,
    /// Speed cap, m/s.
    pub v_max: f64,
    /// Gradients with norm at or below this are treated as zero.
    pub grad_eps: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            gamma: 0.15,
            v_max: 0.15,
            grad_eps: 1e-9,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.v_max > 0.0 && self.grad_eps >= 0.0) {
            return Err(Error::Config(format!(
                "filter requires gamma > 0, v_max > 0, grad_eps >= 0 (got {}, {}, {})",
                self.gamma, self.v_max, self.grad_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub u: ControlInput2D,
    /// The projection moved `u_nom` onto the constraint boundary.
    pub constraint_active: bool,
    /// Gradient vanished; `u_nom` passed through (h >= 0) or the robot stopped (h < 0).
    pub degenerate: bool,
    /// The result was scaled down to `v_max`.
    pub clamped: bool,
}

/// Linear extended class-K function.
#[inline]
pub fn alpha(h: f64, gamma: f64) -> f64 {
    gamma * h
}

/// Minimum-norm correction of `u_nom` satisfying `grad . u >= -alpha(h)`,
/// then clamped to `v_max`.
pub fn filter(u_nom: ControlInput2D, h: f64, grad: [f64; 2], params: &FilterParams) -> Result<FilterOutcome> {
    if !u_nom.is_finite() || !h.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Contract(format!(
            "filter inputs must be finite (u_nom = {u_nom:?}, h = {h}, grad = {grad:?})"
        )));
    }
    let mut out = project(u_nom, h, grad, params);
    let speed = out.u.norm();
    if speed > params.v_max {
        let s = params.v_max / speed;
        out.u = ControlInput2D::new(out.u.vx * s, out.u.vy * s);
        out.clamped = true;
    }
    Ok(out)
}

/// The projection step alone, before speed clamping.
pub fn project(u_nom: ControlInput2D, h: f64, grad: [f64; 2], params: &FilterParams) -> FilterOutcome {
    let g2 = grad[0] * grad[0] + grad[1] * grad[1];
    if g2.sqrt() <= params.grad_eps {
        let u = if h >= 0.0 { u_nom } else { ControlInput2D::ZERO };
        return FilterOutcome {
            u,
            degenerate: true,
            ..Default::default()
        };
    }
    let bound = -alpha(h, params.gamma);
    let slack = u_nom.dot(grad) - bound;
    if slack >= 0.0 {
        return FilterOutcome {
            u: u_nom,
            ..Default::default()
        };
    }
    let lambda = -slack / g2;
    FilterOutcome {
        u: ControlInput2D::new(u_nom.vx + lambda * grad[0], u_nom.vy + lambda * grad[1]),
        constraint_active: true,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wide() -> FilterParams {
        FilterParams {
            v_max: 10.0,
            ..Default::default()
        }
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(0.0, 0.15), 0.0);
        assert_eq!(alpha(1.0, 0.15), 0.15);
        assert!(alpha(-0.2, 0.15) < alpha(0.1, 0.15));
    }

    #[test]
    fn inactive_constraint_passes_nominal() {
        let u = ControlInput2D::new(0.1, 0.0);
        let out = filter(u, 1.0, [1.0, 0.0], &FilterParams::default()).unwrap();
        assert_eq!(out.u, u);
        assert!(!out.constraint_active && !out.degenerate && !out.clamped);
    }

    #[test]
    fn active_constraint_on_boundary() {
        let out = filter(ControlInput2D::new(-1.0, 0.0), 0.0, [1.0, 0.0], &wide()).unwrap();
        assert_eq!(out.u, ControlInput2D::new(0.0, 0.0));
        assert!(out.constraint_active);
    }

    #[test]
    fn hand_evaluated_projection() {
        let out = filter(ControlInput2D::new(-1.0, -1.0), 0.5, [0.0, 2.0], &wide()).unwrap();
        assert!((out.u.vx + 1.0).abs() < 1e-15);
        assert!((out.u.vy + 0.0375).abs() < 1e-15);
        assert!(out.constraint_active && !out.clamped);
    }

    #[test]
    fn degenerate_gradient() {
        let out = filter(ControlInput2D::new(0.1, 0.1), -0.1, [0.0, 0.0], &wide()).unwrap();
        assert_eq!(out.u, ControlInput2D::ZERO);
        assert!(out.degenerate);
        let u = ControlInput2D::new(0.1, 0.1);
        let out = filter(u, 0.2, [0.0, 0.0], &wide()).unwrap();
        assert_eq!(out.u, u);
        assert!(out.degenerate && !out.constraint_active);
    }

    #[test]
    fn clamp_after_projection() {
        let out = filter(ControlInput2D::new(3.0, 4.0), 1.0, [1.0, 0.0], &FilterParams::default()).unwrap();
        assert!(out.clamped);
        assert!((out.u.norm() - 0.15).abs() < 1e-15);
        assert!((out.u.vx - 0.09).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(filter(ControlInput2D::new(f64::NAN, 0.0), 0.0, [1.0, 0.0], &wide()).is_err());
        assert!(filter(ControlInput2D::ZERO, f64::INFINITY, [1.0, 0.0], &wide()).is_err());
    }

    proptest! {
        #[test]
        fn projection_properties(
            vx in -2.0f64..2.0, vy in -2.0f64..2.0,
            h in -1.0f64..1.0,
            gx in -20.0f64..20.0, gy in -20.0f64..20.0,
            gamma in 0.01f64..2.0,
        ) {
            let params = FilterParams { gamma, v_max: 1e6, grad_eps: 1e-9 };
            let u_nom = ControlInput2D::new(vx, vy);
            let grad = [gx, gy];
            let out = filter(u_nom, h, grad, &params).unwrap();
            prop_assume!(!out.degenerate);
            let bound = -alpha(h, gamma);
            let scale = 1.0 + u_nom.norm() * (gx.abs() + gy.abs());
            prop_assert!(out.u.dot(grad) >= bound - 1e-12 * scale);
            if out.constraint_active {
                prop_assert!((out.u.dot(grad) - bound).abs() <= 1e-12 * scale);
                let d = [out.u.vx - vx, out.u.vy - vy];
                prop_assert!((d[0] * gy - d[1] * gx).abs() <= 1e-12 * scale);
            } else {
                prop_assert_eq!(out.u, u_nom);
            }
            // Idempotence.
            let again = filter(out.u, h, grad, &params).unwrap();
            prop_assert!((again.u.vx - out.u.vx).abs() <= 1e-12 * scale);
            prop_assert!((again.u.vy - out.u.vy).abs() <= 1e-12 * scale);
            // Zero input is feasible whenever h >= 0.
            if h >= 0.0 {
                prop_assert!(ControlInput2D::ZERO.dot(grad) >= bound);
            }
        }
    }
}
