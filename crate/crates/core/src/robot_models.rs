//! Goal-seeking nominal controller, single-integrator and unicycle models,
//! and the look-ahead map from planar velocity to `(v, omega)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::safety_filter::ControlInput2D;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading in (-pi, pi].
    #[serde(default)]
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Point `r` ahead of the wheel axis along the heading.
    pub fn look_ahead(&self, r: f64) -> Point2 {
        Point2::new(self.x + r * self.theta.cos(), self.y + r * self.theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalParams {
    /// Commanded speed, m/s.
    pub k: f64,
    /// Arrival radius, m.
    pub goal_eps: f64,
}

impl Default for NominalParams {
    fn default() -> Self {
        Self {
            k: 0.15,
            goal_eps: 0.005,
        }
    }
}

impl NominalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.goal_eps > 0.0) {
            return Err(Error::Config(format!(
                "nominal controller needs k > 0 and goal_eps > 0 (got {}, {})",
                self.k, self.goal_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffeoParams {
    /// Look-ahead offset in meters. 0.05 m is a guess; the platform value is unknown.
    pub r: f64,
}

impl Default for DiffeoParams {
    fn default() -> Self {
        Self { r: 0.05 }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Constant-speed proportional controller toward `goal`; zero inside `goal_eps`.
pub fn nominal_control(p: Point2, goal: Point2, params: &NominalParams) -> ControlInput2D {
    let d = p.distance(goal);
    if d < params.goal_eps {
        return ControlInput2D::ZERO;
    }
    let gain = params.k / d;
    ControlInput2D::new(gain * (goal.x - p.x), gain * (goal.y - p.y))
}

/// Explicit Euler step of `p' = u`.
pub fn integrate_single(p: Point2, u: ControlInput2D, dt: f64) -> Point2 {
    Point2::new(p.x + u.vx * dt, p.y + u.vy * dt)
}

/// `(v, omega)` realizing planar velocity `u` at the look-ahead point.
pub fn unicycle_from_velocity(theta: f64, u: ControlInput2D, params: &DiffeoParams) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    let v = c * u.vx + s * u.vy;
    let omega = (-s * u.vx + c * u.vy) / params.r;
    (v, omega)
}

/// Explicit Euler step of the unicycle model.
pub fn integrate_unicycle(state: RobotState, v: f64, omega: f64, dt: f64) -> RobotState {
    let (s, c) = state.theta.sin_cos();
    RobotState {
        x: state.x + v * c * dt,
        y: state.y + v * s * dt,
        theta: normalize_angle(state.theta + omega * dt),
    }
}
