//! Call-graph pruning: classify each edge of a statically built call graph as
//! a true or false positive from fused structural and semantic features,
//! remove the predicted false positives, and measure the result.
//!
//! Module map:
//!
//! - [`graph`]: call graphs, source maps, reachability, file formats
//! - [`structural`]: the 22-entry structural vector per edge
//! - [`semantic`]: semantic vectors (embedding files or token hashing)
//! - [`nn`]: dense layers, softmax/cross-entropy, Adam, gradient checking
//! - [`model`]: the fusion classifier, its training loop and model files
//! - [`prune`]: pruning rules, calibration, metrics, monomorphic call sites
//! - [`synth`]: seeded synthetic labeled corpora
//! - [`pipeline`]: end-to-end featurize/train/prune/evaluate helpers

pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prune;
pub mod semantic;
pub mod structural;
pub mod synth;

pub use error::{Error, Result};
