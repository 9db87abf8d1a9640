//! Multichannel keyword spotting.
//!
//! The crate covers the whole path from a simulated seven-microphone smart
//! speaker to calibrated detection metrics:
//!
//! * [`array`] simulates the far-field acoustic lab and synthesizes keyword,
//!   confuser and noise audio,
//! * [`dsp`] turns seven microphone channels into candidate mono channels
//!   (omni, six fixed beams, adaptive noise canceller) and log-Mel features,
//! * [`net`] holds the SVDF detector, the attention keys network and the
//!   per-feature softmax channel fusion,
//! * [`train`] implements the losses, reverse-mode gradients, Adam and the
//!   fine-tuning flows,
//! * [`eval`] computes FRR / FA per hour, threshold calibration, FRR-vs-SNR
//!   curves and SNR gain,
//! * [`bench`] measures real-time factors and model sizes.
//!
//! Data-parallel loops (dataset synthesis, per-clip scoring, per-utterance
//! gradients) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and a plain sequential loop otherwise. Results are
//! always collected in index order, so both paths give identical output.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod bench;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod net;
pub mod par;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};

/// Sample rate used throughout the crate.
pub const SAMPLE_RATE: u32 = 16_000;
