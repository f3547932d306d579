use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Reconstruction, SumError};
use crate::geometry::{render_pointcloud, CameraPose, Image, Intrinsics, Rgb};
use crate::simulator::CAMERA_HEIGHT;

pub const MEMORY_WIDTH: u32 = 640;
pub const MEMORY_HEIGHT: u32 = 360;

/// Which memory images accompany each decision request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemorySelection {
    Frontal,
    Oblique,
    #[default]
    Hybrid,
    None,
}

impl MemorySelection {
    pub const ALL: [MemorySelection; 4] =
        [MemorySelection::Frontal, MemorySelection::Oblique, MemorySelection::Hybrid, MemorySelection::None];

    pub fn as_str(self) -> &'static str {
        match self {
            MemorySelection::Frontal => "frontal",
            MemorySelection::Oblique => "oblique",
            MemorySelection::Hybrid => "hybrid",
            MemorySelection::None => "none",
        }
    }

    pub fn wants_frontal(self) -> bool {
        matches!(self, MemorySelection::Frontal | MemorySelection::Hybrid)
    }

    pub fn wants_oblique(self) -> bool {
        matches!(self, MemorySelection::Oblique | MemorySelection::Hybrid)
    }

    pub fn image_count(self) -> usize {
        self.wants_frontal() as usize + self.wants_oblique() as usize
    }
}

impl fmt::Display for MemorySelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MemorySelection {
    type Err = SumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SumError::Config(format!("unknown memory selection `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryRenderConfig {
    pub frontal_pitch_deg: f64,
    pub oblique_pitch_deg: f64,
    pub hfov_deg: f64,
    /// Frontal camera height above the ground at the viewpoint.
    pub camera_height: f64,
    /// Oblique camera height above ground when the cloud centroid is not ahead of the viewpoint.
    pub fallback_oblique_height: f64,
    pub background: Rgb,
}

impl Default for MemoryRenderConfig {
    fn default() -> Self {
        Self {
            frontal_pitch_deg: 0.0,
            oblique_pitch_deg: 45.0,
            hfov_deg: 90.0,
            camera_height: CAMERA_HEIGHT,
            fallback_oblique_height: 3.0,
            background: [0, 0, 0],
        }
    }
}

impl MemoryRenderConfig {
    pub fn validate(&self) -> Result<(), SumError> {
        if !(0.0..=5.0).contains(&self.frontal_pitch_deg) {
            return Err(SumError::Config(format!("frontal pitch {} deg outside [0, 5]", self.frontal_pitch_deg)));
        }
        if !(40.0..=50.0).contains(&self.oblique_pitch_deg) {
            return Err(SumError::Config(format!("oblique pitch {} deg outside [40, 50]", self.oblique_pitch_deg)));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(SumError::Config(format!("hfov {} deg", self.hfov_deg)));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics, SumError> {
        Ok(Intrinsics::from_hfov(MEMORY_WIDTH, MEMORY_HEIGHT, self.hfov_deg.to_radians())?)
    }
}

/// Ground position and heading the memory is rendered from, normally the episode start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryViewpoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub ground_z: f64,
}

/// Two rendered views of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMemory {
    pub scene_key: String,
    pub frontal: Image,
    pub oblique: Image,
    pub frontal_pose: CameraPose,
    pub oblique_pose: CameraPose,
    pub frontal_pitch_deg: f64,
    pub oblique_pitch_deg: f64,
    pub reconstruction_digest: String,
    pub created_at: String,
    pub cloud_centroid: Option<[f64; 3]>,
    pub point_count: usize,
}

impl SpatialMemory {
    pub fn images(&self, sel: MemorySelection) -> Vec<&Image> {
        let mut out = Vec::new();
        if sel.wants_frontal() {
            out.push(&self.frontal);
        }
        if sel.wants_oblique() {
            out.push(&self.oblique);
        }
        out
    }
}

/// Frontal camera at robot eye height; oblique camera at the same ground position, raised
/// so its pitched optical axis passes over the cloud centroid.
pub fn memory_poses(vp: &MemoryViewpoint, centroid: Option<[f64; 3]>, cfg: &MemoryRenderConfig) -> (CameraPose, CameraPose) {
    let frontal = CameraPose::new([vp.x, vp.y, vp.ground_z + cfg.camera_height], vp.heading, cfg.frontal_pitch_deg.to_radians());
    let pitch = cfg.oblique_pitch_deg.to_radians();
    let min_z = vp.ground_z + cfg.camera_height;
    let z = match centroid {
        Some(c) => {
            let ahead = (c[0] - vp.x) * vp.heading.cos() + (c[1] - vp.y) * vp.heading.sin();
            if ahead > 0.1 {
                (c[2] + ahead * pitch.tan()).max(min_z)
            } else {
                vp.ground_z + cfg.fallback_oblique_height
            }
        }
        None => vp.ground_z + cfg.fallback_oblique_height,
    };
    (frontal, CameraPose::new([vp.x, vp.y, z], vp.heading, pitch))
}

pub fn render_memory(
    r: &Reconstruction,
    vp: &MemoryViewpoint,
    scene_key: &str,
    cfg: &MemoryRenderConfig,
) -> Result<SpatialMemory, SumError> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let centroid = r.cloud.centroid();
    let (frontal_pose, oblique_pose) = memory_poses(vp, centroid, cfg);
    if r.empty || r.cloud.is_empty() {
        log::warn!("rendering memory for {scene_key} from an empty reconstruction");
    }
    Ok(SpatialMemory {
        scene_key: scene_key.to_string(),
        frontal: render_pointcloud(&r.cloud, &k, &frontal_pose, cfg.background),
        oblique: render_pointcloud(&r.cloud, &k, &oblique_pose, cfg.background),
        frontal_pose,
        oblique_pose,
        frontal_pitch_deg: cfg.frontal_pitch_deg,
        oblique_pitch_deg: cfg.oblique_pitch_deg,
        reconstruction_digest: r.digest(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        cloud_centroid: centroid,
        point_count: r.cloud.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;

    fn cloud_ahead() -> Reconstruction {
        let mut cloud = PointCloud::new();
        for i in 0..20 {
            for j in 0..20 {
                cloud.push([4.0, -1.0 + i as f64 * 0.1, j as f64 * 0.1], [200, 10, 10]);
            }
        }
        Reconstruction { cloud, ..Default::default() }
    }

    fn origin() -> MemoryViewpoint {
        MemoryViewpoint { x: 0.0, y: 0.0, heading: 0.0, ground_z: 0.0 }
    }

    #[test]
    fn fixed_output_size() {
        let m = render_memory(&cloud_ahead(), &origin(), "k", &MemoryRenderConfig::default()).unwrap();
        for img in [&m.frontal, &m.oblique] {
            assert_eq!((img.width, img.height), (MEMORY_WIDTH, MEMORY_HEIGHT));
        }
        assert!(m.frontal.count_color([200, 10, 10]) > 0);
        assert!(m.oblique.count_color([200, 10, 10]) > 0);
    }

    #[test]
    fn empty_reconstruction_renders_background() {
        let r = Reconstruction { empty: true, ..Default::default() };
        let m = render_memory(&r, &origin(), "k", &MemoryRenderConfig::default()).unwrap();
        let px = (MEMORY_WIDTH * MEMORY_HEIGHT) as usize;
        assert_eq!(m.frontal.count_color([0, 0, 0]), px);
        assert_eq!(m.oblique.count_color([0, 0, 0]), px);
        assert_eq!(m.cloud_centroid, None);
    }

    #[test]
    fn pitch_ranges() {
        let bad = MemoryRenderConfig { oblique_pitch_deg: 30.0, ..Default::default() };
        assert!(matches!(render_memory(&cloud_ahead(), &origin(), "k", &bad), Err(SumError::Config(_))));
        let bad = MemoryRenderConfig { frontal_pitch_deg: 10.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = MemoryRenderConfig { frontal_pitch_deg: 5.0, oblique_pitch_deg: 40.0, ..Default::default() };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn oblique_axis_through_centroid() {
        let cfg = MemoryRenderConfig::default();
        let c = [4.0, 0.0, 1.0];
        let (f, o) = memory_poses(&origin(), Some(c), &cfg);
        assert_eq!(f.position[2], CAMERA_HEIGHT);
        assert_eq!(f.pitch, 0.0);
        // the optical axis drops 4 m over 4 m of forward travel at 45 degrees
        assert!((o.position[2] - 5.0).abs() < 1e-9);
        let behind = memory_poses(&origin(), Some([-4.0, 0.0, 1.0]), &cfg).1;
        assert_eq!(behind.position[2], cfg.fallback_oblique_height);
    }

    #[test]
    fn selection_names_and_counts() {
        for s in MemorySelection::ALL {
            assert_eq!(s.as_str().parse::<MemorySelection>().unwrap(), s);
        }
        assert_eq!(MemorySelection::Hybrid.image_count(), 2);
        assert_eq!(MemorySelection::Frontal.image_count(), 1);
        assert_eq!(MemorySelection::None.image_count(), 0);
        assert!("topdown".parse::<MemorySelection>().is_err());
    }
}
