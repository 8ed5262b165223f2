//! Hierarchical text classification over a topic taxonomy.

pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod graphbuilder;
pub mod metrics;
pub mod mlp;
pub mod pathfinder;
pub mod scalar;
pub mod synthetic;
pub mod taxonomy;
pub mod trainer;
pub mod textpipe;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network64 = mlp::Network<f64>;
pub type Network32 = mlp::Network<f32>;
pub type EmbedderModel64 = embedding::EmbedderModel<f64>;
pub type EmbedderModel32 = embedding::EmbedderModel<f32>;
pub type HierarchicalModel64 = trainer::HierarchicalModel<f64>;
pub type HierarchicalModel32 = trainer::HierarchicalModel<f32>;
