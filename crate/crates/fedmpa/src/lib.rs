//! Federated node classification on partitioned graphs with scarce labels.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`] holds the dense-matrix MLP: forward/backward passes, losses,
//!   optimizers, and checkpoints.
//! * [`graph`] holds sparse undirected graphs, symmetric normalization, and
//!   balanced partitioning across clients.
//! * [`fed`] simulates the federation: client state, payloads, aggregation,
//!   and the round loop.
//! * [`models`] adds the propagation head and the structure-reconstruction
//!   variants on top of the federated feature extractor.
//! * [`data`] loads and generates datasets and label splits.
//! * [`harness`] runs configured experiments and writes reports.

pub mod data;
pub mod error;
pub mod fed;
pub mod graph;
pub mod harness;
pub mod models;
pub mod nn;

pub use error::{Error, Result};
