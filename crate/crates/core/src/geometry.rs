//! Pinhole camera model, depth-frame fusion and z-buffered point rendering.
//!
//! Conventions used throughout the crate:
//!
//! * world frame is right-handed with Z up;
//! * camera frame is +Z forward, +X right, +Y down;
//! * `yaw` rotates about world Z, with yaw 0 pointing the optical axis along world +X;
//! * positive `pitch` tilts the optical axis downward.
//!
//! Continuous pixel coordinates put pixel `(i, j)` over `[i, i + 1) x [j, j + 1)`,
//! so its center sits at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rgb = [u8; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("point is behind the camera (camera-frame z = {0})")]
    BehindCamera(f64),
    #[error("frame {0} has no depth map")]
    MissingDepth(u64),
    #[error("frame {0} has no camera pose")]
    MissingPose(u64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        center_x: f64,
        center_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self { focal_x, focal_y, center_x, center_y, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, given horizontal field of view.
    pub fn from_hfov(width: u32, height: u32, hfov_rad: f64) -> Result<Self, GeometryError> {
        if !(hfov_rad > 0.0 && hfov_rad < std::f64::consts::PI) {
            return Err(GeometryError::InvalidIntrinsics(format!("hfov {hfov_rad} rad")));
        }
        let f = width as f64 / 2.0 / (hfov_rad / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidIntrinsics(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) || !self.focal_x.is_finite() || !self.focal_y.is_finite() {
            return bad(format!("focal lengths ({}, {})", self.focal_x, self.focal_y));
        }
        if !(self.center_x >= 0.0 && self.center_x < self.width as f64) {
            return bad(format!("center_x {} not in [0, {})", self.center_x, self.width));
        }
        if !(self.center_y >= 0.0 && self.center_y < self.height as f64) {
            return bad(format!("center_y {} not in [0, {})", self.center_y, self.height));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Camera-frame point at pixel `(u, v)` with z-depth `depth`. No bounds check.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.center_x) * depth / self.focal_x,
            (v - self.center_y) * depth / self.focal_y,
            depth,
        )
    }

    /// Pixel coordinates of a camera-frame point; caller guarantees `p.z > 0`.
    pub fn project_camera(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.focal_x * p.x / p.z + self.center_x,
            self.focal_y * p.y / p.z + self.center_y,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraPose {
    pub fn new(position: [f64; 3], yaw: f64, pitch: f64) -> Self {
        Self { position, yaw, pitch }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    /// Camera-to-world rotation; its columns are the camera X, Y, Z axes in world coordinates.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let right = Vector3::new(sy, -cy, 0.0);
        let down = Vector3::new(-sp * cy, -sp * sy, -cp);
        let forward = Vector3::new(cp * cy, cp * sy, -sp);
        Matrix3::from_columns(&[right, down, forward])
    }

    pub fn camera_to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p_cam + self.position()
    }

    pub fn world_to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p_world - self.position())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<Rgb>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { points: Vec::with_capacity(n), colors: Vec::with_capacity(n) }
    }

    pub fn push(&mut self, p: [f64; 3], c: Rgb) {
        self.points.push(p);
        self.colors.push(c);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        self.points.len() == self.colors.len()
            && self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.colors.extend_from_slice(&other.colors);
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let sum = self
            .points
            .iter()
            .fold([0.0; 3], |acc, p| [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]);
        Some([sum[0] / n, sum[1] / n, sum[2] / n])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Self { width, height, pixels: vec![color; width as usize * height as usize] }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self, GeometryError> {
        if pixels.len() != width as usize * height as usize {
            return Err(GeometryError::InvalidImage(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = c;
    }

    pub fn count_color(&self, c: Rgb) -> usize {
        self.pixels.iter().filter(|&&p| p == c).count()
    }
}

/// One timestamped camera observation. Depth maps hold camera-frame z per pixel,
/// with `0.0` meaning "no depth".
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub step_index: u64,
    pub image: Image,
    pub depth: Option<Vec<f64>>,
    pub pose: Option<CameraPose>,
    pub intrinsics: Intrinsics,
}

pub fn backproject_pixel(
    u: f64,
    v: f64,
    depth: f64,
    k: &Intrinsics,
    pose: &CameraPose,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    if !k.contains(u, v) {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: k.width, height: k.height });
    }
    Ok(pose.camera_to_world(&k.unproject(u, v, depth)))
}

/// Returns `(u, v, depth)`.
pub fn project_point(
    p: &Vector3<f64>,
    k: &Intrinsics,
    pose: &CameraPose,
) -> Result<(f64, f64, f64), GeometryError> {
    let pc = pose.world_to_camera(p);
    if !(pc.z > 0.0) {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    let (u, v) = k.project_camera(&pc);
    Ok((u, v, pc.z))
}

/// Backprojects every `pixel_stride`-th pixel (in both axes) of every frame at its
/// pixel center. Pixels with non-finite or non-positive depth are skipped.
pub fn fuse_frames(frames: &[Frame], pixel_stride: usize) -> Result<PointCloud, GeometryError> {
    fuse_frames_within(frames, pixel_stride, f64::INFINITY)
}

/// Like [`fuse_frames`], also dropping pixels whose depth exceeds `max_depth`.
pub fn fuse_frames_within(frames: &[Frame], pixel_stride: usize, max_depth: f64) -> Result<PointCloud, GeometryError> {
    let stride = pixel_stride.max(1);
    let mut cloud = PointCloud::new();
    for frame in frames {
        let depth = frame.depth.as_ref().ok_or(GeometryError::MissingDepth(frame.step_index))?;
        let pose = frame.pose.ok_or(GeometryError::MissingPose(frame.step_index))?;
        let k = &frame.intrinsics;
        if depth.len() != k.pixel_count() || frame.image.pixels.len() != k.pixel_count() {
            return Err(GeometryError::InvalidImage(format!(
                "frame {} buffers do not match {}x{}",
                frame.step_index, k.width, k.height
            )));
        }
        let rot = pose.rotation();
        let origin = pose.position();
        for j in (0..k.height).step_by(stride) {
            for i in (0..k.width).step_by(stride) {
                let idx = j as usize * k.width as usize + i as usize;
                let d = depth[idx];
                if !d.is_finite() || d <= 0.0 || d > max_depth {
                    continue;
                }
                let pc = k.unproject(i as f64 + 0.5, j as f64 + 0.5, d);
                let pw = rot * pc + origin;
                cloud.push([pw.x, pw.y, pw.z], frame.image.pixels[idx]);
            }
        }
    }
    Ok(cloud)
}

/// One-pixel splats with a per-pixel z-buffer. A point replaces the stored one only when
/// strictly nearer, so on exact depth ties the earlier point in the cloud wins.
pub fn render_pointcloud(cloud: &PointCloud, k: &Intrinsics, pose: &CameraPose, background: Rgb) -> Image {
    let mut img = Image::filled(k.width, k.height, background);
    let mut zbuf = vec![f64::INFINITY; k.pixel_count()];
    let rt = pose.rotation().transpose();
    let origin = pose.position();
    for (p, &c) in cloud.points.iter().zip(&cloud.colors) {
        let pc = rt * (Vector3::from(*p) - origin);
        if !(pc.z > 0.0) || !pc.z.is_finite() {
            continue;
        }
        let (u, v) = k.project_camera(&pc);
        if !k.contains(u, v) {
            continue;
        }
        let idx = v.floor() as usize * k.width as usize + u.floor() as usize;
        if pc.z < zbuf[idx] {
            zbuf[idx] = pc.z;
            img.pixels[idx] = c;
        }
    }
    img
}
