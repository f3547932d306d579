use nalgebra::Vector3;

use super::{RobotState, World, SKY_COLOR};
use crate::geometry::{CameraPose, Frame, Image, Intrinsics, Rgb};

/// Farthest horizontal distance searched when ray-marching non-flat terrain.
const TERRAIN_MARCH_RANGE: f64 = 60.0;
const TERRAIN_MARCH_STEP: f64 = 0.1;

/// Pose of the robot's front camera: at `camera_height` above the local ground, level,
/// looking along the robot heading.
pub fn robot_camera_pose(world: &World, state: &RobotState, camera_height: f64) -> CameraPose {
    let p = state.pose;
    let z = world.terrain.height_at(p.x, p.y) + camera_height;
    CameraPose::new([p.x, p.y, z], p.heading, 0.0)
}

/// Ray-casts one ray per pixel center. Sky pixels get [`SKY_COLOR`] and depth 0.
pub fn render_frame(world: &World, state: &RobotState, k: &Intrinsics, camera_height: f64, step_index: u64) -> Frame {
    let pose = robot_camera_pose(world, state, camera_height);
    let rot = pose.rotation();
    let origin = pose.position();
    let mut pixels = Vec::with_capacity(k.pixel_count());
    let mut depth = Vec::with_capacity(k.pixel_count());
    for j in 0..k.height {
        for i in 0..k.width {
            // Camera-frame z of the direction is 1, so the ray parameter equals z-depth.
            let dir = rot * k.unproject(i as f64 + 0.5, j as f64 + 0.5, 1.0);
            match cast_ray(world, &origin, &dir) {
                Some((t, c)) => {
                    pixels.push(c);
                    depth.push(t);
                }
                None => {
                    pixels.push(SKY_COLOR);
                    depth.push(0.0);
                }
            }
        }
    }
    Frame {
        step_index,
        image: Image { width: k.width, height: k.height, pixels },
        depth: Some(depth),
        pose: Some(pose),
        intrinsics: *k,
    }
}

/// Nearest hit along `origin + t * dir`, `t > 0`.
pub fn cast_ray(world: &World, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Rgb)> {
    let mut best: Option<(f64, Rgb)> = ground_hit(world, origin, dir).map(|t| (t, world.ground_color));
    for o in &world.obstacles {
        let base = world.terrain.height_at(o.center[0], o.center[1]);
        if let Some(t) = cylinder_hit(origin, dir, o.center, o.radius, base, base + o.height) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, o.color));
            }
        }
    }
    best
}

fn ground_hit(world: &World, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    if world.terrain.is_flat() {
        return (d.z < 0.0).then(|| -o.z / d.z).filter(|t| *t > 0.0 && t.is_finite());
    }
    let terrain = &world.terrain;
    let hmax = terrain.max_height();
    let horiz = d.x.hypot(d.y);
    if horiz == 0.0 {
        return (d.z < 0.0).then(|| (terrain.height_at(o.x, o.y) - o.z) / d.z).filter(|t| *t > 0.0);
    }
    let above = |t: f64| {
        let p = o + d * t;
        p.z - terrain.height_at(p.x, p.y)
    };
    let dt = TERRAIN_MARCH_STEP / horiz;
    let t_end = TERRAIN_MARCH_RANGE / horiz;
    if above(0.0) <= 0.0 {
        return None;
    }
    let mut t0 = 0.0;
    while t0 < t_end {
        // Above the highest hill and rising: nothing left to hit.
        if d.z >= 0.0 && o.z + d.z * t0 > hmax {
            return None;
        }
        let t1 = t0 + dt;
        let f1 = above(t1);
        if f1 <= 0.0 {
            let (mut lo, mut hi) = (t0, t1);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if above(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        t0 = t1;
    }
    None
}

/// Ray against a vertical cylinder side and top cap.
pub fn cylinder_hit(o: &Vector3<f64>, d: &Vector3<f64>, c: [f64; 2], r: f64, z0: f64, z1: f64) -> Option<f64> {
    let fx = o.x - c[0];
    let fy = o.y - c[1];
    let a = d.x * d.x + d.y * d.y;
    let cc = fx * fx + fy * fy - r * r;
    let mut best: Option<f64> = None;
    if a > 0.0 && cc > 0.0 {
        let b = 2.0 * (fx * d.x + fy * d.y);
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let z = o.z + t * d.z;
            if t > 0.0 && z >= z0 && z <= z1 {
                best = Some(t);
            }
        }
    }
    if d.z != 0.0 {
        let t = (z1 - o.z) / d.z;
        if t > 0.0 {
            let px = o.x + t * d.x - c[0];
            let py = o.y + t * d.y - c[1];
            if px * px + py * py <= r * r && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    best
}
