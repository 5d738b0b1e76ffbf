//! Next-node prediction for AST-based code completion.
//!
//! A partial program is flattened in pre-order, merged into a graph of unique
//! `(type, value)` nodes with weighted adjacency edges and directed
//! parent-child edges, and encoded by stacked graph attention blocks. Two
//! softmax heads predict the value and the type of the next node; the two
//! cross-entropy losses are balanced by learned log-scale task weights.
//!
//! The crate is layered bottom-up:
//!
//! - [`ast`], [`vocab`], [`segment`]: corpus ingestion and encoding
//! - [`graph`]: merged AST graphs for prediction prefixes
//! - [`autodiff`]: tape-based reverse-mode differentiation and Adam
//! - [`model`]: the network, its toggles and losses
//! - [`train`]: training, evaluation and the ablation driver
//! - [`checkpoint`], [`complete`]: persistence and inference

pub mod ast;
pub mod autodiff;
pub mod checkpoint;
pub mod complete;
mod error;
pub mod exec;
pub mod graph;
pub mod model;
pub mod segment;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

/// Number of consecutive flattened nodes in one training segment.
pub const SEGMENT_LEN: usize = 50;

/// Longest prefix a prediction can be conditioned on.
pub const MAX_PREFIX: usize = SEGMENT_LEN - 1;
