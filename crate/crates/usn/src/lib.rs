//! Uniform sparse networks (USN): degree-uniform bipartite sparsity patterns,
//! CSR forward/backward kernels, model-space combinatorics and an experiment
//! harness for topology-invariance, sparse-advantage, overfitting and scaling
//! studies.
//!
//! A USN layer keeps one connection budget `E = round(density * n_in * n_out)`
//! and spreads it so that every input neuron has the same out-degree and every
//! output neuron the same in-degree, up to a rounding error of one. The
//! density-1 special case is the ordinary fully connected layer.

pub mod cli;
pub mod datasets;
pub mod error;
pub mod modelspace;
pub mod network;
pub mod rng;
pub mod sparselinalg;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
