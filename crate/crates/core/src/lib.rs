//! Curriculum fine-tuning of an autoregressive (AT) transformer into a
//! non-autoregressive (NAT) one.
//!
//! The crate bundles everything needed to run the experiment end to end on
//! synthetic sequence-transduction tasks:
//!
//! - [`tensor`]: `f64` tensors with reverse-mode autodiff
//! - [`model`]: encoder–decoder transformer with switchable decoder mask
//! - [`curriculum`]: pacing functions, decoder-input substitution, mask switch
//! - [`training`]: losses, Adam, distillation and the three-stage pipeline
//! - [`inference`]: NAT decoding, AT greedy/beam search, noisy parallel decoding
//! - [`eval`]: BLEU, repetition metric, latency benchmark
//! - [`data`]: synthetic corpora, vocabulary, corpus files and batching

pub mod curriculum;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// RNG used everywhere randomness is needed; seeded explicitly.
pub type SeededRng = rand_chacha::ChaCha8Rng;
