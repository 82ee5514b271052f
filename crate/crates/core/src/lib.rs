//! Numeric core for relation-level metaphor classification.
//!
//! A recurrent sentence encoder is conditioned on a pooled representation of
//! a candidate expression through feature-wise linear modulation (FiLM):
//! a small generator maps the candidate vector to per-feature scale and
//! shift vectors that are applied to every hidden state before pooling or
//! attention. Everything here is `no_std` + `alloc`; file formats, the
//! command-line driver and threading live in the `metafilm` crate.
//!
//! Module map:
//!
//! * [`tensor`] and [`tape`]: dense `f64` arrays and define-by-run
//!   reverse-mode differentiation.
//! * [`gradcheck`]: central-difference gradient verification.
//! * [`vocab`] and [`embeddings`]: tokenization, vocabulary, word vectors
//!   and candidate encoders.
//! * [`model`]: the four architecture variants.
//! * [`optim`] and [`train`]: loss, Adadelta, batching and the epoch loop.
//! * [`data`]: instances, record lines, splits and k-fold plans.
//! * [`metrics`]: confusion counts, P/R/F1/accuracy and the paired t-test.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

mod special;

pub use error::{Error, Result};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
