//! Adaptive Siamese visual object tracker.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small double-precision neural-network kernel with hand-written
//!   backward passes (convolution, pooling, LRN, ROI pooling, losses, SGD).
//! - [`geometry`]: boxes, IoU, Gaussian candidate sampling and patch crops.
//! - [`siamese`]: the multi-level ROI matching network, its contrastive
//!   training and the adaptive template buffer.
//! - [`men`]: the motion estimation network producing a 51x51 score map
//!   over a search window.
//! - [`wcnn`]: the sequence-specific weighting head and score fusion.
//! - [`tracker`]: the online tracking loop with short/long-term memories.
//! - [`synth`] and [`eval`]: synthetic sequences and one-pass evaluation.

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod men;
pub mod nn;
pub mod siamese;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod wcnn;

pub use error::{Error, Result};
pub use tensor::Tensor;
