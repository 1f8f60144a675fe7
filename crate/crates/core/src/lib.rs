//! Consistent distributed graph neural networks on spectral-element meshes.
//!
//! A structured box mesh is split across `R` simulated ranks. Each rank owns a
//! reduced graph plus halo rows mirroring nodes it shares with neighbors, and
//! the message-passing layers exchange and synchronize those rows so that the
//! distributed model reproduces the single-rank model exactly.

pub mod cli;
pub mod comm;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod meshgen;
pub mod nn;

pub use error::{Error, Result};
