//! Active reconstruction with 3D Gaussian splats: fit a scene from posed
//! images, score candidate viewpoints by depth-aware uncertainty, and pick the
//! next view or scan path to capture.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod image;
pub mod optim;
pub mod planner;
pub mod render;
pub mod rng;
pub mod scene;
pub mod scoring;
pub mod uncertainty;

pub use error::{Error, Result};
