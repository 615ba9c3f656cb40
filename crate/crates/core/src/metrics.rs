//! ROUGE-1/2/L and content-unigram recall, per pair and averaged over a corpus.
//!
//! Matching is exact on pipeline tokens (clipped counts, no stemming). Corpus
//! values are unweighted means over pairs.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::text::{DocumentRecord, Preprocessor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricTriple {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    fn from_counts(matched: usize, cand_total: usize, ref_total: usize) -> Self {
        let ratio = |d: usize| if d == 0 { 0.0 } else { matched as f64 / d as f64 };
        Self::new(ratio(cand_total), ratio(ref_total))
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches<K: Eq + Hash>(cand: &HashMap<K, usize>, reference: &HashMap<K, usize>) -> usize {
    cand.iter().map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0))).sum()
}

/// Clipped n-gram overlap. `n = 0` yields zeros.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> MetricTriple {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = clipped_matches(&cand, &refs);
    MetricTriple::from_counts(matched, cand.values().sum(), refs.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> MetricTriple {
    MetricTriple::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Clipped unigram recall over tokens accepted by `is_content`.
pub fn content_recall<T: Eq + Hash>(candidate: &[T], reference: &[T], is_content: impl Fn(&T) -> bool) -> f64 {
    fn count<'a, T: Eq + Hash>(xs: &'a [T], is_content: &impl Fn(&T) -> bool) -> HashMap<&'a T, usize> {
        let mut m = HashMap::new();
        for x in xs.iter().filter(|x| is_content(x)) {
            *m.entry(x).or_insert(0) += 1;
        }
        m
    }
    let (cand, refs) = (count(candidate, &is_content), count(reference, &is_content));
    let total: usize = refs.values().sum();
    if total == 0 {
        return 0.0;
    }
    clipped_matches(&cand, &refs) as f64 / total as f64
}

/// Share of reference content words (stopwords excluded) found in the candidate.
pub fn recall_metric<S: AsRef<str>>(candidate: &[S], reference: &[S], stoplist: &HashSet<String>) -> f64 {
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refs: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    content_recall(&cand, &refs, |w| !stoplist.contains(*w))
}

/// All four measures for one candidate/reference pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub rouge1: MetricTriple,
    pub rouge2: MetricTriple,
    pub rouge_l: MetricTriple,
    pub recall: f64,
}

impl PairScores {
    pub fn score<T: Eq + Hash>(candidate: &[T], reference: &[T], is_content: impl Fn(&T) -> bool) -> Self {
        Self {
            rouge1: rouge_n(candidate, reference, 1),
            rouge2: rouge_n(candidate, reference, 2),
            rouge_l: rouge_l(candidate, reference),
            recall: content_recall(candidate, reference, is_content),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub rouge1: MetricTriple,
    pub rouge2: MetricTriple,
    pub rouge_l: MetricTriple,
    /// Content-unigram recall.
    pub recall: f64,
    pub pairs: usize,
}

fn mean_triple<'a>(items: impl Iterator<Item = &'a MetricTriple>, n: f64) -> MetricTriple {
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for t in items {
        p += t.precision;
        r += t.recall;
        f += t.f1;
    }
    MetricTriple {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    }
}

impl RougeReport {
    /// Unweighted mean over pairs; zeros for an empty slice.
    pub fn mean(scores: &[PairScores]) -> Self {
        if scores.is_empty() {
            return Self::default();
        }
        let n = scores.len() as f64;
        Self {
            rouge1: mean_triple(scores.iter().map(|s| &s.rouge1), n),
            rouge2: mean_triple(scores.iter().map(|s| &s.rouge2), n),
            rouge_l: mean_triple(scores.iter().map(|s| &s.rouge_l), n),
            recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
            pairs: scores.len(),
        }
    }
}

pub const AUDIT_HEADER: &str = "id,rouge1_p,rouge1_r,rouge1_f,rouge2_p,rouge2_r,rouge2_f,rougeL_p,rougeL_r,rougeL_f,recall";

/// Corpus evaluation result with per-pair rows and decode failures.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEvaluation {
    pub report: RougeReport,
    pub pairs: Vec<(String, PairScores)>,
    pub failures: Vec<(String, String)>,
}

impl CorpusEvaluation {
    pub fn audit_csv(&self) -> String {
        let mut out = String::from(AUDIT_HEADER);
        out.push('\n');
        for (id, s) in &self.pairs {
            let _ = write!(out, "{}", csv_field(id));
            for t in [s.rouge1, s.rouge2, s.rouge_l] {
                let _ = write!(out, ",{},{},{}", t.precision, t.recall, t.f1);
            }
            let _ = writeln!(out, ",{}", s.recall);
        }
        out
    }
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs `decoder` on every record and scores its output against the
/// reference, both passed through `pre`. Failed decodes are listed and left
/// out of the means.
pub fn evaluate_corpus<F, E>(mut decoder: F, records: &[DocumentRecord], pre: &Preprocessor) -> CorpusEvaluation
where
    F: FnMut(&DocumentRecord) -> Result<String, E>,
    E: std::fmt::Display,
{
    let stoplist = pre.stoplist();
    let mut pairs = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for rec in records {
        match decoder(rec) {
            Ok(text) => {
                let cand = pre.tokens(&text);
                let refs = pre.tokens(&rec.reference);
                let scores = PairScores::score(&cand, &refs, |w| !stoplist.contains(w));
                pairs.push((rec.id.clone(), scores));
            }
            Err(e) => failures.push((rec.id.clone(), e.to_string())),
        }
    }
    let scores: Vec<PairScores> = pairs.iter().map(|(_, s)| *s).collect();
    CorpusEvaluation {
        report: RougeReport::mean(&scores),
        pairs,
        failures,
    }
}

/// Fraction of trigrams in `tokens` that already occurred earlier in the sequence.
pub fn trigram_repetition_rate<T: Eq + Hash>(tokens: &[T]) -> f64 {
    if tokens.len() < 3 {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let mut repeats = 0;
    let windows = tokens.windows(3);
    let total = windows.len();
    for w in windows {
        if !seen.insert(w) {
            repeats += 1;
        }
    }
    repeats as f64 / total as f64
}
