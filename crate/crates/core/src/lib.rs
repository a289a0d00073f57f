//! End-to-end learnable connectivity graphs for multivariate time series.
//!
//! A per-ROI sequence encoder (1D-CNN or bidirectional GRU) maps each
//! sample's `v × t` signal matrix to embeddings, a graph generator turns those
//! into a positive symmetric connectivity matrix `A = softmax(h) softmax(h)ᵀ`,
//! and a GCN over `(A, Pearson features)` classifies the sample. Group
//! intra/inter and sparsity regularizers shape the generated graphs, and the
//! [`interpret`] module ranks predefined ROI modules by how many
//! class-discriminative edges touch them.
//!
//! - [`dataset`]: samples, on-disk layout, features, splits, synthetic data
//! - [`nn`]: layers with exact gradients, Adam, finite-difference checks
//! - [`encoders`]: CNN and bi-GRU ROI encoders
//! - [`graphgen`]: graph generator and regularizers (with pairwise oracles)
//! - [`predictor`]: GCN, pooling, classifier head and fixed-graph baselines
//! - [`pipeline`]: whole-model forward/backward for every compared pipeline
//! - [`training`]: objective, metrics, training loop, ablation and sweeps
//! - [`interpret`]: mean graphs, edge t-tests and module difference scores

pub mod dataset;
pub mod encoders;
pub mod error;
pub mod graphgen;
pub mod interpret;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod training;

pub use error::{Error, Result};
