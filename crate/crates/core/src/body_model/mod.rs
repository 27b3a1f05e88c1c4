//! Parametric body model: blendshapes, joint regression and skinning.

pub mod generator;
pub mod io;
mod model;

pub use generator::{desk_mirror_index, generate_desk_model, DEFAULT_VERTEX_COUNT, MIN_VERTEX_COUNT};
pub use io::{model_hash, ModelFile};
pub use model::*;
