//! Anomaly detection for multivariate time series with a graph neural
//! network that learns the sensor graph instead of assuming one.
//!
//! Each sensor gets a learned condition embedding; pairwise cosine
//! similarity between embeddings is pruned to a top-k directed graph, and
//! messages along the surviving edges are transformed by a single shared
//! MLP that is conditioned on the (source, target) embedding pair. A
//! conditional readout predicts every sensor's next value, and the gap
//! between prediction and observation is turned into a robust, per-sensor
//! normalized deviation score. A layer-wise relevance pass over the same
//! graph localizes which sensors drove a detection.
//!
//! The crate is organised as a small stack:
//!
//! * [`tensor`]: dense f64 tensors plus a minimal reverse-mode tape.
//! * [`data`]: CSV ingestion, resampling, imputation, windowing.
//! * [`graph`]: embeddings, cosine similarity, top-k adjacency.
//! * [`model`]: encoder, edge-conditional updates, conditional readout.
//! * [`train`]: Adam, early stopping, checkpoints.
//! * [`score`]: robust error normalization, thresholding, metrics.
//! * [`explain`]: relevance propagation back to sensors and edges.
//! * [`synth`]: synthetic generator with planted dependencies/anomalies.
//! * [`config`], [`pipeline`], [`cli`]: batch front end.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod score;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
