use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{read_glb, write_glb, GlbContents, SumError};
use crate::agent::{http_agent, join_url};
use crate::geometry::{fuse_frames_within, CameraPose, Frame, Intrinsics, PointCloud};
use crate::imageio::png_base64;

const MAX_GLB_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Fuse the simulator's depth maps at their known camera poses.
    #[default]
    PosedDepth,
    /// Send the frames to an HTTP reconstruction service returning a GLB point cloud.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructorConfig {
    pub backend: Backend,
    pub pixel_stride: usize,
    /// Metres; farther depth samples are dropped.
    pub max_depth: f64,
    pub external_endpoint: Option<String>,
    pub timeout_secs: u64,
    /// Forwarded verbatim to the external backend.
    pub hyper_params: BTreeMap<String, Value>,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            backend: Backend::PosedDepth,
            pixel_stride: 2,
            max_depth: 10.0,
            external_endpoint: None,
            timeout_secs: 300,
            hyper_params: BTreeMap::new(),
        }
    }
}

/// Colored world-frame points together with the cameras that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reconstruction {
    pub cloud: PointCloud,
    pub frame_poses: Vec<Option<CameraPose>>,
    pub intrinsics: Option<Intrinsics>,
    pub source_frame_ids: Vec<u64>,
    /// No usable geometry was recovered.
    pub empty: bool,
}

impl Reconstruction {
    pub fn to_glb(&self) -> Vec<u8> {
        write_glb(&GlbContents {
            cloud: self.cloud.clone(),
            frame_ids: self.source_frame_ids.clone(),
            frame_poses: self.frame_poses.clone(),
            intrinsics: self.intrinsics,
        })
    }

    pub fn from_glb(bytes: &[u8]) -> Result<Self, SumError> {
        let c = read_glb(bytes)?;
        let empty = c.cloud.is_empty();
        Ok(Self {
            cloud: c.cloud,
            frame_poses: c.frame_poses,
            intrinsics: c.intrinsics,
            source_frame_ids: c.frame_ids,
            empty,
        })
    }

    /// SHA-256 (lowercase hex) of the GLB serialization.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_glb())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn reconstruct(frames: &[Frame], cfg: &ReconstructorConfig) -> Result<Reconstruction, SumError> {
    if frames.is_empty() {
        return Err(SumError::EmptyInput);
    }
    let r = match cfg.backend {
        Backend::PosedDepth => {
            let cloud = fuse_frames_within(frames, cfg.pixel_stride, cfg.max_depth)?;
            let empty = cloud.is_empty();
            Reconstruction {
                cloud,
                frame_poses: frames.iter().map(|f| f.pose).collect(),
                intrinsics: Some(frames[0].intrinsics),
                source_frame_ids: frames.iter().map(|f| f.step_index).collect(),
                empty,
            }
        }
        Backend::External => external(frames, cfg)?,
    };
    if r.empty {
        log::warn!("reconstruction from {} frames produced no points", frames.len());
    }
    Ok(r)
}

fn external(frames: &[Frame], cfg: &ReconstructorConfig) -> Result<Reconstruction, SumError> {
    let endpoint = cfg
        .external_endpoint
        .as_deref()
        .ok_or_else(|| SumError::Config("external backend needs external_endpoint".into()))?;
    let mut items = Vec::with_capacity(frames.len());
    for f in frames {
        let pose = f.pose.map(|p| json!([p.position[0], p.position[1], p.position[2], p.yaw, p.pitch]));
        items.push(json!({"image": png_base64(&f.image)?, "pose": pose}));
    }
    let body = serde_json::to_vec(&json!({"frames": items, "params": cfg.hyper_params}))
        .map_err(|e| SumError::Config(format!("serialize request: {e}")))?;
    let url = join_url(endpoint, "reconstruct");
    let resp = http_agent(Duration::from_secs(cfg.timeout_secs))
        .post(&url)
        .header("content-type", "application/json")
        .send(&body[..]);
    let mut resp = resp.map_err(|e| SumError::BackendUnreachable(format!("{url}: {e}")))?;
    if !resp.status().is_success() {
        return Err(SumError::BackendUnreachable(format!("{url}: http status {}", resp.status())));
    }
    let mut bytes = Vec::new();
    resp.body_mut()
        .as_reader()
        .take(MAX_GLB_BYTES)
        .read_to_end(&mut bytes)
        .map_err(|e| SumError::BackendUnreachable(format!("{url}: {e}")))?;
    // taken verbatim so the digest matches the service's own output
    Reconstruction::from_glb(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryError, Image};

    fn frame(i: u64, depth: f64) -> Frame {
        let k = Intrinsics::from_hfov(8, 4, std::f64::consts::FRAC_PI_2).unwrap();
        Frame {
            step_index: i,
            image: Image::filled(8, 4, [10, 20, 30]),
            depth: Some(vec![depth; 32]),
            pose: Some(CameraPose::new([i as f64, 0.0, 1.0], 0.0, 0.0)),
            intrinsics: k,
        }
    }

    #[test]
    fn posed_depth_counts_and_ids() {
        let frames = [frame(0, 2.0), frame(3, 2.0)];
        let r = reconstruct(&frames, &ReconstructorConfig::default()).unwrap();
        assert_eq!(r.cloud.len(), 2 * 4 * 2);
        assert_eq!(r.source_frame_ids, [0, 3]);
        assert!(!r.empty);
    }

    #[test]
    fn depth_limit_and_empty_flag() {
        let r = reconstruct(&[frame(0, 50.0)], &ReconstructorConfig::default()).unwrap();
        assert!(r.empty && r.cloud.is_empty());
        let sky = reconstruct(&[frame(0, 0.0)], &ReconstructorConfig::default()).unwrap();
        assert!(sky.empty);
    }

    #[test]
    fn missing_inputs() {
        assert!(matches!(reconstruct(&[], &ReconstructorConfig::default()), Err(SumError::EmptyInput)));
        let mut f = frame(5, 1.0);
        f.pose = None;
        assert!(matches!(
            reconstruct(&[f], &ReconstructorConfig::default()),
            Err(SumError::Geometry(GeometryError::MissingPose(5)))
        ));
        let cfg = ReconstructorConfig { backend: Backend::External, ..Default::default() };
        assert!(matches!(reconstruct(&[frame(0, 1.0)], &cfg), Err(SumError::Config(_))));
    }

    #[test]
    fn digest_tracks_content() {
        let a = reconstruct(&[frame(0, 2.0)], &ReconstructorConfig::default()).unwrap();
        let b = reconstruct(&[frame(0, 2.0)], &ReconstructorConfig::default()).unwrap();
        let c = reconstruct(&[frame(0, 3.0)], &ReconstructorConfig::default()).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
        assert_eq!(Reconstruction::from_glb(&a.to_glb()).unwrap().digest(), a.digest());
    }

    #[test]
    fn unreachable_external_backend() {
        let cfg = ReconstructorConfig {
            backend: Backend::External,
            external_endpoint: Some("http://127.0.0.1:9".into()),
            timeout_secs: 2,
            ..Default::default()
        };
        assert!(matches!(reconstruct(&[frame(0, 1.0)], &cfg), Err(SumError::BackendUnreachable(_))));
    }
}
