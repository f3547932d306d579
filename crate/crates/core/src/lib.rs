//! Vision-and-language navigation with a reconstructed spatial memory.
//!
//! The crate generates deterministic simulated worlds, reconstructs a colored point cloud
//! from exploration frames, renders frontal and oblique memory images, runs a decision
//! loop against a pluggable policy and scores the resulting trajectories.

pub mod agent;
pub mod geometry;
pub mod imageio;
pub mod simulator;
pub mod sum;
pub mod eval;
pub mod runner;
pub mod cli;
