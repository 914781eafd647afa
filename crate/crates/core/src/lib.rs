//! Label-supervised concept bottleneck models on precomputed embeddings.
//!
//! The pipeline: ingest a two-level concept vocabulary ([`vocab`]), load
//! image and concept-text embeddings ([`store`]), annotate each training
//! image with the best-matching concepts of its own class ([`annotate`]),
//! train the single bottleneck layer while scoring labels through the fixed
//! intervention matrix ([`model`]), then measure accuracy and concept-removal
//! leakage against baselines ([`baselines`], [`eval`]).

pub mod annotate;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod runlog;
pub mod service;
pub mod store;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
