use std::fmt::Write as _;

use super::{train, Example, TrainConfig, TrainError};
use crate::metrics::csv_field;
use crate::model::ModelConfig;
use crate::text::{make_folds, Vocabulary};

pub const CV_HEADER: &str = "fold,val_loss,rouge1,rouge2,rougeL,recall,status";

/// Best-epoch validation figures of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    /// 1-based.
    pub fold: usize,
    pub validation_ids: Vec<String>,
    pub val_loss: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub recall: f64,
    pub error: Option<String>,
}

impl FoldRow {
    fn values(&self) -> [f64; 5] {
        [self.val_loss, self.rouge1, self.rouge2, self.rouge_l, self.recall]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub rows: Vec<FoldRow>,
    /// Mean over successful folds: val_loss, rouge1, rouge2, rougeL, recall.
    pub mean: [f64; 5],
    /// Population standard deviation over successful folds.
    pub stddev: [f64; 5],
}

impl CvReport {
    /// One row per fold plus a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CV_HEADER);
        out.push('\n');
        for r in &self.rows {
            match &r.error {
                None => {
                    let v = r.values();
                    let _ = writeln!(out, "{},{},{},{},{},{},ok", r.fold, v[0], v[1], v[2], v[3], v[4]);
                }
                Some(e) => {
                    let _ = writeln!(out, "{},,,,,,{}", r.fold, csv_field(&format!("failed: {e}")));
                }
            }
        }
        let m = self.mean;
        let _ = writeln!(out, "mean,{},{},{},{},{},ok", m[0], m[1], m[2], m[3], m[4]);
        out
    }
}

/// Trains one model per fold of `make_folds(examples, k, cfg.seed)`; each
/// fold's validation chunk is scored at its best epoch. A failing fold is
/// recorded and left out of the aggregate.
pub fn cross_validate(examples: &[Example], k: usize, vocab: &Vocabulary, model: &ModelConfig, cfg: &TrainConfig) -> Result<CvReport, TrainError> {
    let folds = make_folds(examples, k, cfg.seed)?;
    let mut rows = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let validation_ids = fold.validation.iter().map(|e| e.id.clone()).collect();
        let mut row = FoldRow {
            fold: i + 1,
            validation_ids,
            val_loss: f64::NAN,
            rouge1: f64::NAN,
            rouge2: f64::NAN,
            rouge_l: f64::NAN,
            recall: f64::NAN,
            error: None,
        };
        match train(&fold.train, &fold.validation, vocab, model, cfg) {
            Ok(outcome) => {
                let best = outcome.history.best().expect("a finished run has history");
                row.val_loss = best.val_loss;
                row.rouge1 = best.rouge1;
                row.rouge2 = best.rouge2;
                row.rouge_l = best.rouge_l;
                row.recall = best.recall;
            }
            Err(abort) => row.error = Some(abort.error.to_string()),
        }
        rows.push(row);
    }
    let ok: Vec<[f64; 5]> = rows.iter().filter(|r| r.error.is_none()).map(FoldRow::values).collect();
    let n = ok.len() as f64;
    let mut mean = [f64::NAN; 5];
    let mut stddev = [f64::NAN; 5];
    if !ok.is_empty() {
        for c in 0..5 {
            mean[c] = ok.iter().map(|v| v[c]).sum::<f64>() / n;
            stddev[c] = (ok.iter().map(|v| (v[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt();
        }
    }
    Ok(CvReport { rows, mean, stddev })
}
