//! Papez: lightweight single-channel speech separation.
//!
//! Time-domain masking pipeline (encoder, masking module, decoder) built on a
//! recurrent transformer layer with memory-token attention and adaptive
//! per-token halting. Includes a small tensor/autodiff core, SI-SNR/uPIT
//! training, synthetic mixture generation, WAV I/O, and compute-audit
//! counters for complexity verification.
//!
//! See the crate examples for runnable entry points into each capability.

pub mod audit;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod halting;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
