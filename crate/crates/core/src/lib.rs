//! Colored cubes under rapidly switching spotlights: procedural dataset
//! generation, temporal contrastive training of a small CNN, and layer-wise
//! linear probing, all deterministic from a single master seed.

pub mod color;
pub mod config;
pub mod dataset;
pub mod error;
pub mod lighting;
pub mod nn;
pub mod pipeline;
pub mod probe;
pub mod render;
pub mod rng;
pub mod scene;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod vec3;
pub mod viz;

pub use error::{Error, Result};
