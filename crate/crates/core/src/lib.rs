//! Geometric GNN engine for adsorbate-catalyst energy regression.
//!
//! A SchNet-style message-passing backbone over radius graphs, plus model
//! variants that either connect adsorbate and catalyst through shared edges or
//! keep them apart and combine them by pooling, separate backbones, or
//! cross-attention.

// Validation writes `!(x > 0.0)` so that NaN is rejected with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod batch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod synthetic;
pub mod system;
pub mod tensor;
pub mod train;
pub mod variants;
pub mod verify;

pub use error::{Error, Result};
