//! Differentiable articulated body model with 2D, 3D and parameter losses,
//! a direct fitter, and a small regressor from part-segmentation grids to
//! model parameters, plus synthetic data and evaluation measures.
//!
//! Generic over the scalar type; `f64` aliases are re-exported at the root.

pub mod body_model;
pub mod camera;
pub mod error;
pub mod fitter;
pub mod gradcheck;
pub mod kinematics;
pub mod linalg;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod optim;
pub mod regressor;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};

/// Double-precision instantiations used by the tools and experiments.
pub type BodyModelF64 = body_model::BodyModel<f64>;
pub type PoseParamsF64 = body_model::PoseParams<f64>;
pub type ShapeParamsF64 = body_model::ShapeParams<f64>;
pub type RotationSetF64 = body_model::RotationSet<f64>;
pub type CameraF64 = camera::Camera<f64>;
pub type Vec3F64 = linalg::Vec3<f64>;
pub type RegressorNetF64 = regressor::RegressorNet<f64>;
pub type BodyModelF32 = body_model::BodyModel<f32>;
pub type CameraF32 = camera::Camera<f32>;
