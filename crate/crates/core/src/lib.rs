//! Verification regions around sentence-embedding classes.
//!
//! The crate builds axis-aligned regions (plain, shrunk and clustered boxes,
//! optionally on rotated principal axes) around a class of embedding vectors,
//! trains small feed-forward classifiers over the embeddings, hardens them
//! with region-driven augmentation and PGD adversarial training, and checks
//! whether whole regions or l∞ balls are classified as one class using
//! interval bound propagation with a counterexample search.

// `!(x >= 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod kv;
pub mod network;
pub mod robust;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;
