//! Sound-guided image editing: audio embeddings are mapped into pseudo-word
//! tokens that condition a latent diffusion editor through low-rank adapters.

pub mod audio;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod media;
pub mod mapping;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod tensor;
pub mod toyworld;
pub mod trainer;

pub use error::{Error, Result};
