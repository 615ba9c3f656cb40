//! Objective, optimizer, schedule, training loop, cross-validation,
//! distillation and checkpoint persistence.

mod checkpoint;
mod crossval;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, ManifestEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use crossval::{cross_validate, CvReport, FoldRow, CV_HEADER};
pub use loss::{batch_loss, compute_loss, LossParts, SoftTargets};
pub use optim::{global_norm, lr_schedule, sgd_momentum_step, Velocity};
pub use trainer::{distill, early_stop_check, evaluate_examples, train, train_from, TrainAbort, TrainOutcome};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError};
use crate::numeric::NumericError;
use crate::text::{encode, DocumentRecord, PipelineError, Preprocessor, TokenSequence, Vocabulary, EOS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset: {0}")]
    EmptyData(&'static str),
    #[error("teacher and student vocabularies differ")]
    VocabMismatch,
    #[error("student is larger than teacher: {0}")]
    StudentTooLarge(String),
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] PipelineError),
}

impl From<NumericError> for TrainError {
    fn from(e: NumericError) -> Self {
        TrainError::Model(ModelError::Numeric(e))
    }
}

impl TrainError {
    /// True for NaN/Inf failures (forward or gradient).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient { .. } | TrainError::Model(ModelError::Numeric(NumericError::NonFinite { .. }))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub momentum: f64,
    pub early_stop_patience: usize,
    pub clip_norm: f64,
    pub distill_temperature: f64,
    /// Weight of the gold cross-entropy in the distillation blend.
    pub distill_mix: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 1,
            base_lr: 0.02,
            warmup_steps: 400,
            momentum: 0.9,
            early_stop_patience: 5,
            clip_norm: 5.0,
            distill_temperature: 2.0,
            distill_mix: 0.5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if !(self.distill_temperature >= 1.0 && self.distill_temperature.is_finite()) {
            return bad("distill_temperature must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.distill_mix) {
            return bad("distill_mix must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One encoded (source, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub source: TokenSequence,
    /// `[BOS, .., EOS]`
    pub target: TokenSequence,
}

impl Example {
    /// Encodes a record, truncating the source to `max_source_len` tokens and
    /// the target so that it fits in `max_target_len` decoding steps.
    pub fn from_record(record: &DocumentRecord, pre: &Preprocessor, vocab: &Vocabulary, config: &ModelConfig) -> Self {
        let mut source = encode(&pre.tokens(&record.source), vocab, false);
        source.ids.truncate(config.max_source_len);
        let mut target = encode(&pre.tokens(&record.reference), vocab, true);
        if target.ids.len() > config.max_target_len + 1 {
            target.ids.truncate(config.max_target_len);
            target.ids.push(EOS);
        }
        Self {
            id: record.id.clone(),
            source,
            target,
        }
    }

    pub fn from_records(records: &[DocumentRecord], pre: &Preprocessor, vocab: &Vocabulary, config: &ModelConfig) -> Vec<Self> {
        records.iter().map(|r| Self::from_record(r, pre, vocab, config)).collect()
    }
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,rouge1,rouge2,rougeL,recall,lr";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// F1 values of the validation decodes.
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub recall: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.val_loss).collect()
    }

    /// Row with the lowest validation loss (earliest on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.rows.iter().reduce(|b, r| if r.val_loss < b.val_loss { r } else { b })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.rouge1, r.rouge2, r.rouge_l, r.recall, r.lr
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { distill_mix: 1.5, ..Default::default() },
            TrainConfig { distill_temperature: 0.5, ..Default::default() },
            TrainConfig { warmup_steps: 0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn target_truncation_keeps_eos() {
        let vocab = Vocabulary::specials_only();
        let cfg = ModelConfig {
            max_target_len: 3,
            max_source_len: 2,
            ..ModelConfig::fixture(4)
        };
        let rec = DocumentRecord {
            id: "x".into(),
            title: String::new(),
            source: "aa bb cc dd".into(),
            reference: "ee ff gg hh ii".into(),
        };
        let ex = Example::from_record(&rec, &Preprocessor::default(), &vocab, &cfg);
        assert_eq!(ex.source.len(), 2);
        assert_eq!(ex.target.ids, vec![2, 1, 1, 3]);
    }

    #[test]
    fn history_csv_and_best() {
        let row = |epoch, val_loss| EpochRecord {
            epoch,
            train_loss: 1.0,
            val_loss,
            rouge1: 0.5,
            rouge2: 0.25,
            rouge_l: 0.5,
            recall: 0.5,
            lr: 0.1,
        };
        let h = TrainHistory {
            rows: vec![row(1, 3.0), row(2, 2.0), row(3, 2.0)],
        };
        assert_eq!(h.best().unwrap().epoch, 2);
        let csv = h.to_csv();
        assert_eq!(csv.lines().next().unwrap(), HISTORY_HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,1,3,0.5,0.25,0.5,0.5,0.1");
    }
}
