//! Scene-graph generation with an image-level attentional context.
//!
//! The engine builds a fully connected graph over an image's objects and
//! iteratively refines node (object), edge (predicate) and global context
//! states with attention and LSTM cells, ending in classification heads.
//! Everything runs on a from-scratch reverse-mode autodiff tape so that
//! gradients can be verified against finite differences.
//!
//! Modules:
//! - [`autodiff`] — tensors, the operation tape, gradient checking
//! - [`model`] — the graph network itself and its parameters
//! - [`data`] — synthetic scene corpora and the JSONL corpus format
//! - [`train`] — loss, negative sampling, Adam, the training loop
//! - [`eval`] — recall@K, object accuracy and the frequency baseline
//! - [`entropy`] — marginal/conditional entropy study over a corpus

pub mod autodiff;
pub mod data;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;
pub mod util;

pub use error::{Error, Result};
