#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Joint sound-source localization and time-frequency mask estimation through
//! mask-weighted spatial coding.
//!
//! The crate covers the whole chain: synthetic multichannel scenes
//! ([`scene`]), STFT analysis and synthesis ([`stft`]), ideal ratio masks and
//! the four grid encodings ([`coding`]), the gradient-conditioning study of
//! those encodings under an MSE loss ([`conditioning`]), a small trainable
//! estimator with hand-written backpropagation ([`estimator`]), joint DoA and
//! mask decoding ([`decode`]), MVDR beamforming ([`beamform`]) and scoring
//! ([`metrics`]). [`pipeline`] wires them together for whole scenes.
//!
//! Data-parallel inner loops (frames, bins, sweep rows, scene batches) run on
//! rayon when the `parallel` feature is enabled, and sequentially otherwise.
//! Reductions are always performed in a fixed order, so results are
//! bit-identical between the two builds.

pub mod beamform;
pub mod coding;
pub mod conditioning;
pub mod container;
pub mod decode;
pub mod error;
pub mod estimator;
pub mod metrics;
mod par;
pub mod pipeline;
pub mod scene;
pub mod signal;
pub mod stft;

pub use error::{Error, Result};
pub use num_complex::Complex64;
