//! Encoder-decoder summarizer.
//!
//! A transformer-style bidirectional encoder produces the context matrix `H`;
//! a GRU decoder with additive attention (`e_i = v^T tanh(W_h h_i + W_s s_t + b_a)`)
//! emits `softmax(W_o s_t + b)` one token at a time. A coverage vector (running
//! sum of attention distributions) can feed the attention scores, a coverage
//! penalty, and trigram blocking at decode time.

mod decode;
mod mlm;
mod network;
mod params;

pub use decode::{beam_decode, beam_decode_scored, greedy_decode, greedy_decode_scored, Decoded};
pub use mlm::{mask_positions, mlm_pretrain_step};
pub use network::{coverage_loss, AttentionWeights, DecoderState, EncoderOutput, Network, SequenceLoss};
pub use params::{ModelParams, ParamSpec, Slots};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::NumericError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty source sequence")]
    EmptySource,
    #[error("source length {len} exceeds max_source_len {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("target needs {steps} decoding steps, max_target_len is {max}")]
    LengthOverflow { steps: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub attention_dim: usize,
    pub max_source_len: usize,
    /// Maximum decoding steps, EOS included.
    pub max_target_len: usize,
    /// Coverage-informed attention scores and trigram blocking at decode time.
    pub coverage_enabled: bool,
    /// Weight of the coverage penalty in the training objective; 0 disables it.
    pub coverage_weight: f64,
    /// When false, attention is replaced by a uniform distribution (mean context).
    pub attention_enabled: bool,
    pub beam_width: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default desk-scale dimensions: embed 32, hidden 64, attention 32, two layers.
    pub fn fixture(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            encoder_layers: 2,
            attention_dim: 32,
            max_source_len: 128,
            max_target_len: 48,
            coverage_enabled: false,
            coverage_weight: 0.0,
            attention_enabled: true,
            beam_width: 1,
            seed: 1,
        }
    }

    /// Width of the encoder feed-forward sublayer.
    pub fn ff_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("attention_dim", self.attention_dim),
            ("beam_width", self.beam_width),
            ("max_source_len", self.max_source_len),
            ("max_target_len", self.max_target_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.vocab_size < crate::text::NUM_SPECIALS {
            return Err(ModelError::InvalidConfig("vocab_size must cover the 4 special tokens".into()));
        }
        if !(self.coverage_weight >= 0.0 && self.coverage_weight.is_finite()) {
            return Err(ModelError::InvalidConfig("coverage_weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}
