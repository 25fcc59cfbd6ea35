//! Geometric knowledge distillation for graph neural networks.
//!
//! A teacher GNN trained on a complete graph exposes its latent geometry as
//! neural heat kernel (NHK) matrices; a student trained on a partial view of
//! the graph is pushed to reproduce those matrices alongside its supervised
//! objective.
//!
//! Module map:
//! - [`tensor`]: dense/sparse matrices and the reverse-mode tape
//! - [`graph`]: graph container, normalisation, privileged-information splits, SBM generator
//! - [`model`]: GCN and SGC backbones with per-layer feature traces
//! - [`nhk`]: kernel instantiations and exact heat-kernel oracles
//! - [`distill`]: distillation losses, weighting matrix, inverse-NHK mapper
//! - [`train`]: Adam, teacher/student training drivers, batch sampling, grid search

pub mod distill;
pub mod error;
pub mod graph;
pub mod model;
pub mod nhk;
pub mod tensor;
pub mod train;

pub use error::{GkdError, Result};
