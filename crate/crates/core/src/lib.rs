//! Source-free active domain adaptation at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense 2-D tensors with a reverse-mode tape and a
//!   finite-difference gradient checker.
//! - [`model`]: a small MLP (feature extractor + bottleneck + linear classifier),
//!   SGD with momentum, the polynomial learning-rate schedule and checkpoints.
//! - [`domains`]: synthetic domain-shift generators and CSV ingestion.
//! - [`sampling`]: contrastive active sampling and the baseline query strategies.
//! - [`adaptation`]: the anchor/persistence-vault objective and the per-round
//!   training loop.
//! - [`harness`]: source pretraining, the multi-round query-and-adapt loop,
//!   metrics and experiment configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod domains;
pub mod error;
pub mod harness;
pub mod model;
pub mod numcore;
pub mod sampling;

pub use error::{CheckpointError, Error, Result};
pub use numcore::{Tape, Tensor, Var};

/// Stable identifier of a sample inside a [`domains::LabeledSet`].
pub type SampleId = usize;
