//! Spatial understanding memory: sample frames, reconstruct a colored point cloud, render
//! frontal and oblique memory images and keep them in an on-disk bank.

mod bank;
mod glb;
mod memory;
mod reconstruct;
mod sampling;

pub use bank::*;
pub use glb::*;
pub use memory::*;
pub use reconstruct::*;
pub use sampling::*;

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum SumError {
    #[error("no frames to sample from")]
    EmptyInput,
    #[error("q must be at least 2, got {0}")]
    QTooSmall(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("reconstruction backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("malformed GLB: {0}")]
    MalformedGlb(#[from] GlbError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid memory key `{0}`")]
    InvalidKey(String),
    #[error("memory record `{key}` is corrupt: {reason}")]
    CorruptRecord { key: String, reason: String },
    #[error("image codec: {0}")]
    Image(#[from] crate::imageio::ImageIoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
