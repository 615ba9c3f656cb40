//! Desk-scale abstractive summarization laboratory.
//!
//! The crate covers the whole pipeline: text cleaning and vocabulary
//! construction ([`text`]), a small reverse-mode tensor engine ([`numeric`]),
//! a transformer-encoder / GRU-decoder summarizer with additive attention and
//! coverage ([`model`]), the training harness with scheduling, early stopping,
//! cross-validation and distillation ([`training`]), and ROUGE evaluation
//! ([`metrics`]).

pub mod metrics;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod synthetic;
pub mod text;
pub mod training;
