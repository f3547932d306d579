use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::{normalize_angle, ActionType, Pose2D, SimError, World};

/// Robot camera height above the ground, meters.
pub const CAMERA_HEIGHT: f64 = 0.38;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub forward_step: f64,
    /// Radians.
    pub rotate_step: f64,
    pub camera_height: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { forward_step: 0.5, rotate_step: 30f64.to_radians(), camera_height: CAMERA_HEIGHT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    /// Set when the most recent FORWARD was blocked.
    pub collided: bool,
    pub stopped: bool,
}

impl RobotState {
    pub fn at(pose: Pose2D) -> Self {
        Self { pose, collided: false, stopped: false }
    }
}

/// Number of rotate steps in a full turn, if `step` divides 2*pi.
fn lattice_size(step: f64) -> Option<i64> {
    let n = (TAU / step).round();
    (n >= 1.0 && (n * step - TAU).abs() < 1e-9).then_some(n as i64)
}

/// Heading of lattice index `k` for a step dividing the full turn into `n`, in (-pi, pi].
fn lattice_heading(k: i64, n: i64, step: f64) -> f64 {
    let mut k = k.rem_euclid(n);
    if k > n / 2 {
        k -= n;
    }
    if 2 * k == n {
        PI
    } else {
        k as f64 * step
    }
}

/// Heading reached by `k` rotate steps from zero. Generated start headings use this so that
/// every reachable heading lies on the rotation lattice.
pub fn heading_from_steps(k: i64, step: f64) -> f64 {
    match lattice_size(step) {
        Some(n) => lattice_heading(k, n, step),
        None => normalize_angle(k as f64 * step),
    }
}

/// Rotates by `sign * step`. Headings on the rotation lattice stay on it exactly, which makes
/// LEFT followed by RIGHT an exact identity there.
fn rotate(heading: f64, sign: i64, step: f64) -> f64 {
    if let Some(n) = lattice_size(step) {
        let k = (heading / step).round();
        if (heading - lattice_heading(k as i64, n, step)).abs() < 1e-9 {
            return lattice_heading(k as i64 + sign, n, step);
        }
    }
    normalize_angle(heading + sign as f64 * step)
}

/// Whether the segment `a -> b` touches any obstacle footprint.
pub fn segment_hits_obstacle(world: &World, a: [f64; 2], b: [f64; 2]) -> bool {
    world.obstacles.iter().any(|o| segment_point_distance(a, b, o.center) <= o.radius)
}

pub fn segment_point_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    (a[0] + t * d[0] - p[0]).hypot(a[1] + t * d[1] - p[1])
}

pub fn step(
    world: &World,
    state: &RobotState,
    action: ActionType,
    cfg: &DynamicsConfig,
) -> Result<RobotState, SimError> {
    if state.stopped {
        return Err(SimError::SteppedAfterStop);
    }
    let mut next = *state;
    next.collided = false;
    match action {
        ActionType::Forward => {
            let p = state.pose;
            let (s, c) = p.heading.sin_cos();
            let to = [p.x + cfg.forward_step * c, p.y + cfg.forward_step * s];
            if !world.bounds.contains(to) || segment_hits_obstacle(world, p.xy(), to) {
                next.collided = true;
            } else {
                next.pose.x = to[0];
                next.pose.y = to[1];
            }
        }
        ActionType::LeftRotate => next.pose.heading = rotate(state.pose.heading, 1, cfg.rotate_step),
        ActionType::RightRotate => next.pose.heading = rotate(state.pose.heading, -1, cfg.rotate_step),
        ActionType::Stop => next.stopped = true,
    }
    Ok(next)
}
