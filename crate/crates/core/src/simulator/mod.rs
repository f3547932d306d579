//! Deterministic planar worlds: procedural generation, four-action dynamics and a
//! ray-cast RGB-D camera mounted on the robot.

mod dynamics;
mod generate;
mod render;
mod world;

pub use dynamics::*;
pub use generate::*;
pub use render::*;
pub use world::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step called after STOP")]
    SteppedAfterStop,
    #[error("could not generate a reachable episode {episode} for {scene} after {attempts} attempts")]
    UnreachableTarget { scene: String, episode: usize, attempts: usize },
    #[error("unknown scene class `{0}`")]
    UnknownSceneClass(String),
    #[error("invalid episode {id}: {reason}")]
    InvalidEpisode { id: String, reason: String },
    #[error("world file does not match regeneration from seed {seed} / {scene}")]
    WorldMismatch { seed: u64, scene: String },
}
