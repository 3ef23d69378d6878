//! Reconstruction of the multilayer network linking country activities
//! across realms such as science, technology and trade.
//!
//! The pipeline: ingest raw activity counts, binarize them by revealed
//! comparative advantage, contract pairs of binary matrices into cross-layer
//! assist matrices, validate links against a maximum-entropy bipartite null
//! model sampled at scale, and summarize layer-pair interactions as lagged
//! signal-to-noise curves.

pub mod assist;
pub mod bicm;
pub mod error;
pub mod export;
pub mod ingest;
pub mod layers;
pub mod matrix;
pub mod pipeline;
pub mod profile;
pub mod rca;
pub mod rng;
pub mod signal;
pub mod significance;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use layers::{ActivityCode, Hierarchy, LayerId};
pub use matrix::{pool, BinaryMatrix, Pooling, RawMatrix, TimeWindow};
