//! Desk-scale engine for multi-modal implicit 3D scene representations.
//!
//! A scene is a latent-conditioned MLP mapping world coordinates to
//! features, decoded by a differentiable LSTM ray marcher into per-pixel
//! color, depth and semantic class. Scenes are learned from posed 2D
//! images; a linear head fitted on a handful of labeled views transfers
//! labels to every scene sharing the feature space.

pub mod autodiff;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod nn;
pub mod params;
pub mod ply;
pub mod renderer;
pub mod scene;
pub mod synthetic;
pub mod training;

pub use autodiff::{grad_check, DiffValue, Tape, TensorShape};
pub use error::{Error, Result};
pub use math::{Mat3, Vec3};
pub use model::Model;
pub use params::{ParamId, ParamStore};
pub use scene::{ArchDims, LatentCode};
