//! A multi-task grounded language model and its linear baseline.
//!
//! The model reads a sentence token by token through two gated recurrent
//! pathways that share one word-embedding table. The visual pathway's final
//! hidden state is projected to an image feature vector; the textual pathway
//! predicts the next word at every position. A mixing weight alpha blends the
//! two objectives, giving three variants: visual (alpha = 0), textual
//! (alpha = 1) and multi-task (alpha = 0.1). The baseline is a ridge
//! regression from bag-of-words counts to the same feature vectors.
//!
//! Module map: [`numcore`] holds the dense linear algebra and deterministic
//! RNG everything else builds on, [`layers`] the activations and recurrent
//! cell, [`model`] the full network with exact reverse-mode gradients,
//! [`baseline`] the ridge regression, [`optim`] Adam and gradient checking,
//! [`data`] tokenization, vocabulary, file formats and the synthetic corpus
//! generator, and [`eval`] the four evaluation protocols.

pub mod baseline;
mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numcore;
pub mod optim;

pub use error::{Error, Result};
pub use numcore::{Matrix, Rng, Vector};
