//! On-disk memory bank: `<root>/<key>/{frontal.png, oblique.png, meta.json}`.
//!
//! Every file is written to a temporary name and renamed into place, images first and
//! `meta.json` last. Readers check the image digests recorded in `meta.json` and re-read
//! when they catch a record mid-update.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, MemorySelection, SpatialMemory, SumError};
use crate::geometry::Image;
use crate::imageio::{decode_png, encode_png};

const FRONTAL: &str = "frontal.png";
const OBLIQUE: &str = "oblique.png";
const META: &str = "meta.json";
const DEFAULT_RETRIES: usize = 20;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryMeta {
    pub scene_key: String,
    pub frontal_pitch_deg: f64,
    pub oblique_pitch_deg: f64,
    pub reconstruction_digest: String,
    pub created_at: String,
    pub frontal_sha256: String,
    pub oblique_sha256: String,
    pub cloud_centroid: Option<[f64; 3]>,
    pub point_count: usize,
}

/// How memory records are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// One record per (scene, instruction).
    #[default]
    SceneInstruction,
    /// One record per scene, shared by all its episodes.
    Scene,
}

pub fn memory_key(scene_id: &str, instruction: &str, mode: KeyMode) -> String {
    match mode {
        KeyMode::Scene => scene_id.to_string(),
        KeyMode::SceneInstruction => format!("{scene_id}-{}", &sha256_hex(instruction.as_bytes())[..16]),
    }
}

fn check_key(key: &str) -> Result<(), SumError> {
    let ok = !key.is_empty()
        && !key.starts_with('.')
        && key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(SumError::InvalidKey(key.to_string()))
    }
}

/// Result of a lookup; a miss is not an error.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedMemory {
    pub hit: bool,
    pub images: Vec<Image>,
    pub meta: Option<MemoryMeta>,
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    root: PathBuf,
    retries: usize,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), SumError> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{name}.{}.{n}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, dir.join(name)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

impl MemoryBank {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), retries: DEFAULT_RETRIES }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_dir(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    pub fn store(&self, key: &str, m: &SpatialMemory) -> Result<MemoryMeta, SumError> {
        check_key(key)?;
        let dir = self.record_dir(key);
        fs::create_dir_all(&dir)?;
        let frontal = encode_png(&m.frontal)?;
        let oblique = encode_png(&m.oblique)?;
        let meta = MemoryMeta {
            scene_key: key.to_string(),
            frontal_pitch_deg: m.frontal_pitch_deg,
            oblique_pitch_deg: m.oblique_pitch_deg,
            reconstruction_digest: m.reconstruction_digest.clone(),
            created_at: m.created_at.clone(),
            frontal_sha256: sha256_hex(&frontal),
            oblique_sha256: sha256_hex(&oblique),
            cloud_centroid: m.cloud_centroid,
            point_count: m.point_count,
        };
        let meta_bytes = serde_json::to_vec_pretty(&meta).map_err(|e| SumError::Config(e.to_string()))?;
        write_atomic(&dir, FRONTAL, &frontal)?;
        write_atomic(&dir, OBLIQUE, &oblique)?;
        write_atomic(&dir, META, &meta_bytes)?;
        Ok(meta)
    }

    pub fn contains(&self, key: &str) -> bool {
        check_key(key).is_ok() && self.record_dir(key).join(META).is_file()
    }

    pub fn read_meta(&self, key: &str) -> Result<Option<MemoryMeta>, SumError> {
        check_key(key)?;
        match fs::read(self.record_dir(key).join(META)) {
            Ok(b) => serde_json::from_slice(&b)
                .map(Some)
                .map_err(|e| SumError::CorruptRecord { key: key.to_string(), reason: format!("meta.json: {e}") }),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Keys of all complete records, sorted.
    pub fn keys(&self) -> Result<Vec<String>, SumError> {
        let mut keys = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(keys),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str() {
                if self.contains(name) {
                    keys.push(name.to_string());
                }
            }
        }
        keys.sort();
        Ok(keys)
    }

    /// Loads the images named by `sel` (frontal before oblique).
    pub fn load(&self, key: &str, sel: MemorySelection) -> Result<LoadedMemory, SumError> {
        check_key(key)?;
        if sel == MemorySelection::None {
            return Ok(LoadedMemory::default());
        }
        let dir = self.record_dir(key);
        let mut reason = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(2 * attempt as u64));
            }
            let meta_bytes = match fs::read(dir.join(META)) {
                Ok(b) => b,
                Err(e) if e.kind() == ErrorKind::NotFound => return Ok(LoadedMemory::default()),
                Err(e) => return Err(e.into()),
            };
            let meta: MemoryMeta = match serde_json::from_slice(&meta_bytes) {
                Ok(m) => m,
                Err(e) => {
                    reason = format!("meta.json: {e}");
                    continue;
                }
            };
            let mut wanted = Vec::new();
            if sel.wants_frontal() {
                wanted.push((FRONTAL, &meta.frontal_sha256));
            }
            if sel.wants_oblique() {
                wanted.push((OBLIQUE, &meta.oblique_sha256));
            }
            match read_verified(&dir, &wanted) {
                Ok(images) => return Ok(LoadedMemory { hit: true, images, meta: Some(meta) }),
                Err(r) => reason = r,
            }
        }
        Err(SumError::CorruptRecord { key: key.to_string(), reason })
    }
}

fn read_verified(dir: &Path, wanted: &[(&str, &String)]) -> Result<Vec<Image>, String> {
    let mut images = Vec::with_capacity(wanted.len());
    for (name, digest) in wanted {
        let bytes = fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if sha256_hex(&bytes) != **digest {
            return Err(format!("{name}: digest does not match meta.json"));
        }
        images.push(decode_png(&bytes).map_err(|e| format!("{name}: {e}"))?);
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraPose;
    use std::sync::atomic::AtomicBool;
    use std::sync::Arc;

    fn memory(shade: u8) -> SpatialMemory {
        let pose = CameraPose::new([0.0, 0.0, 0.38], 0.0, 0.0);
        SpatialMemory {
            scene_key: "k".into(),
            frontal: Image::filled(32, 18, [shade, 0, 0]),
            oblique: Image::filled(32, 18, [0, shade, 0]),
            frontal_pose: pose,
            oblique_pose: pose,
            frontal_pitch_deg: 0.0,
            oblique_pitch_deg: 45.0,
            reconstruction_digest: format!("{shade:064x}"),
            created_at: "2026-01-01T00:00:00Z".into(),
            cloud_centroid: Some([1.0, 2.0, 0.5]),
            point_count: 10,
        }
    }

    #[test]
    fn round_trip_and_selection() {
        let dir = tempfile::tempdir().unwrap();
        let bank = MemoryBank::new(dir.path());
        let m = memory(9);
        let meta = bank.store("farm-s1-abc", &m).unwrap();
        assert_eq!(meta.reconstruction_digest, m.reconstruction_digest);
        let hybrid = bank.load("farm-s1-abc", MemorySelection::Hybrid).unwrap();
        assert!(hybrid.hit);
        assert_eq!(hybrid.images, vec![m.frontal.clone(), m.oblique.clone()]);
        assert_eq!(hybrid.meta.unwrap(), meta);
        assert_eq!(bank.load("farm-s1-abc", MemorySelection::Oblique).unwrap().images, vec![m.oblique.clone()]);
        assert_eq!(bank.load("farm-s1-abc", MemorySelection::Frontal).unwrap().images, vec![m.frontal]);
        assert!(bank.load("farm-s1-abc", MemorySelection::None).unwrap().images.is_empty());
        assert_eq!(bank.keys().unwrap(), ["farm-s1-abc"]);
    }

    #[test]
    fn miss_is_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let bank = MemoryBank::new(dir.path().join("absent"));
        let l = bank.load("nothing", MemorySelection::Hybrid).unwrap();
        assert!(!l.hit && l.images.is_empty() && l.meta.is_none());
        assert!(bank.keys().unwrap().is_empty());
    }

    #[test]
    fn tampered_image_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let bank = MemoryBank::new(dir.path()).with_retries(2);
        bank.store("k", &memory(1)).unwrap();
        fs::write(dir.path().join("k").join(OBLIQUE), encode_png(&Image::filled(2, 2, [1, 1, 1])).unwrap()).unwrap();
        assert!(bank.load("k", MemorySelection::Frontal).unwrap().hit);
        assert!(matches!(bank.load("k", MemorySelection::Hybrid), Err(SumError::CorruptRecord { .. })));
    }

    #[test]
    fn bad_keys_rejected() {
        let bank = MemoryBank::new("/tmp/unused");
        for k in ["", "../x", ".hidden", "a/b"] {
            assert!(matches!(bank.load(k, MemorySelection::Hybrid), Err(SumError::InvalidKey(_))));
        }
    }

    #[test]
    fn key_modes() {
        let a = memory_key("farm-s1", "Go to the tree.", KeyMode::SceneInstruction);
        let b = memory_key("farm-s1", "Go to the rock.", KeyMode::SceneInstruction);
        assert_ne!(a, b);
        assert_eq!(a.len(), "farm-s1-".len() + 16);
        assert!(check_key(&a).is_ok());
        assert_eq!(memory_key("farm-s1", "anything", KeyMode::Scene), "farm-s1");
    }

    #[test]
    fn concurrent_readers_never_see_torn_records() {
        let dir = tempfile::tempdir().unwrap();
        let bank = Arc::new(MemoryBank::new(dir.path()).with_retries(200));
        let versions = [memory(1), memory(2)];
        bank.store("k", &versions[0]).unwrap();
        let done = Arc::new(AtomicBool::new(false));
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let bank = bank.clone();
                let done = done.clone();
                let versions = versions.clone();
                std::thread::spawn(move || {
                    let mut loads = 0;
                    while !done.load(Ordering::Relaxed) || loads < 20 {
                        let l = bank.load("k", MemorySelection::Hybrid).unwrap();
                        assert!(l.hit);
                        let consistent =
                            versions.iter().any(|v| l.images == [v.frontal.clone(), v.oblique.clone()]);
                        assert!(consistent, "images from two different writes");
                        loads += 1;
                    }
                })
            })
            .collect();
        for i in 0..200 {
            bank.store("k", &versions[i % 2]).unwrap();
        }
        done.store(true, Ordering::Relaxed);
        for r in readers {
            r.join().unwrap();
        }
    }
}
