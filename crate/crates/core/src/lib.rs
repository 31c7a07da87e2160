//! Noise-robust intent classification via large-margin contrastive learning.
//!
//! This crate is the compute side of the `lmcl` project: a small trainable
//! sentence encoder, the paired-transcript losses (self-supervised and
//! supervised contrastive terms with a distance polarization regularizer,
//! a Jensen-Shannon mimicry loss between two peer models, and a cyclically
//! annealed self-distillation term), the optimizer and schedules, and the
//! two-stage training loops that tie them together. Everything here is pure
//! computation over owned buffers with hand-derived gradients; file formats
//! and the command-line harness live in the companion `lmcl-cli` crate.
//!
//! The crate is `no_std` (with `alloc`) so the training core stays free of
//! platform dependencies; all randomness flows through explicit seeds.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod losses;
mod matrix;
pub mod metrics;
pub mod numeric;
pub mod optim;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
