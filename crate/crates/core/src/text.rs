//! Corpus ingestion and preprocessing: cleaning, segmentation, stopword
//! removal, vocabulary construction, id encoding and seeded data splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::permutation;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// The shipped stoplist (127 English function words).
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Punctuation kept by [`clean_text`]; each occurrence becomes its own token.
const KEPT_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '-', '%'];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("corpus contains no tokens after preprocessing")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: missing field {field:?}")]
    MissingField { field: String, line: usize },
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error("need at least {k} records for {k} folds, got {n}")]
    TooFewRecords { n: usize, k: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// One corpus entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub title: String,
    /// Text to summarise: the body when the corpus line has one, else the title.
    pub source: String,
    /// Gold summary (the abstract).
    pub reference: String,
}

impl DocumentRecord {
    /// The title-generation proxy task: summarise the abstract into the title.
    pub fn title_task(&self) -> DocumentRecord {
        DocumentRecord {
            id: self.id.clone(),
            title: self.title.clone(),
            source: self.reference.clone(),
            reference: self.title.clone(),
        }
    }
}

/// Lowercases, drops every character outside letters, digits, whitespace and
/// `.,;:!?()-%`, collapses whitespace runs to one space and trims.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphabetic() || c.is_ascii_digit() || KEPT_PUNCTUATION.contains(&c) {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Splits cleaned text on whitespace and detaches each kept punctuation mark.
pub fn tokenize(cleaned: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in cleaned.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if KEPT_PUNCTUATION.contains(&c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

pub fn remove_stopwords<S: AsRef<str>>(tokens: &[S], stoplist: &HashSet<String>) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !stoplist.contains(*t))
        .map(str::to_owned)
        .collect()
}

/// Parses a newline-delimited token file; blank lines and `#` comments are skipped.
pub fn parse_token_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

pub fn load_token_list(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(parse_token_list(&text))
}

/// The cleaning/segmentation/stopword chain with a fixed stoplist.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    stoplist: HashSet<String>,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(parse_token_list(DEFAULT_STOPWORDS))
    }
}

impl Preprocessor {
    pub fn new<I: IntoIterator<Item = String>>(stopwords: I) -> Self {
        Self {
            stoplist: stopwords.into_iter().collect(),
        }
    }

    pub fn stoplist(&self) -> &HashSet<String> {
        &self.stoplist
    }

    pub fn tokens(&self, raw: &str) -> Vec<String> {
        remove_stopwords(&tokenize(&clean_text(raw)), &self.stoplist)
    }
}

/// Bidirectional token/id map. Ids 0..4 are the reserved specials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    domain_terms: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    domain_terms: Vec<String>,
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            tokens: v.tokens,
            domain_terms: v.domain_terms.into_iter().collect(),
        }
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = PipelineError;

    fn try_from(repr: VocabularyRepr) -> Result<Self, Self::Error> {
        if repr.tokens.len() < NUM_SPECIALS
            || repr.tokens[..NUM_SPECIALS]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(PipelineError::InvalidVocabulary(
                "special tokens must occupy ids 0-3".into(),
            ));
        }
        let mut index = HashMap::with_capacity(repr.tokens.len());
        for (id, tok) in repr.tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(PipelineError::InvalidVocabulary(format!(
                    "duplicate token {tok:?}"
                )));
            }
        }
        let domain_terms: BTreeSet<String> = repr.domain_terms.into_iter().collect();
        if let Some(missing) = domain_terms.iter().find(|t| !index.contains_key(*t)) {
            return Err(PipelineError::InvalidVocabulary(format!(
                "domain term {missing:?} not in token list"
            )));
        }
        Ok(Self {
            tokens: repr.tokens,
            index,
            domain_terms,
        })
    }
}

impl Vocabulary {
    /// A vocabulary holding only the four specials.
    pub fn specials_only() -> Self {
        let tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().cloned().zip(0..).collect();
        Self {
            tokens,
            index,
            domain_terms: BTreeSet::new(),
        }
    }

    /// Specials, then tokens with count >= `min_freq` ordered by descending
    /// count with lexicographic tiebreak, truncated to `max_size` entries total.
    pub fn from_token_lists<'a, I>(lists: I, min_freq: usize, max_size: usize) -> Result<Self, PipelineError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if min_freq == 0 {
            return Err(PipelineError::InvalidVocabulary("min_freq must be >= 1".into()));
        }
        if max_size < NUM_SPECIALS {
            return Err(PipelineError::InvalidVocabulary(format!(
                "max_size must be >= {NUM_SPECIALS}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for list in lists {
            for tok in list {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(PipelineError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(tok, c)| c >= min_freq && !SPECIAL_TOKENS.contains(&tok))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Self::specials_only();
        for (tok, _) in ranked.into_iter().take(max_size - NUM_SPECIALS) {
            vocab.push(tok.to_owned());
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) -> usize {
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn domain_terms(&self) -> &BTreeSet<String> {
        &self.domain_terms
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Builds the vocabulary over the preprocessed sources and references.
pub fn build_vocabulary(
    corpus: &[DocumentRecord],
    pre: &Preprocessor,
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary, PipelineError> {
    let lists: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(|r| [pre.tokens(&r.source), pre.tokens(&r.reference)])
        .collect();
    Vocabulary::from_token_lists(lists.iter().map(Vec::as_slice), min_freq, max_size)
}

/// Appends absent terms in input order; existing ids never move.
pub fn extend_vocabulary<S: AsRef<str>>(vocab: &Vocabulary, domain_terms: &[S]) -> Vocabulary {
    let mut out = vocab.clone();
    for term in domain_terms {
        let term = term.as_ref();
        if !out.contains(term) {
            out.push(term.to_owned());
        }
        out.domain_terms.insert(term.to_owned());
    }
    out
}

/// Token ids for one source or target sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Content ids with PAD/BOS/EOS removed.
    pub fn content(&self) -> Vec<usize> {
        self.ids
            .iter()
            .copied()
            .filter(|&id| id != PAD && id != BOS && id != EOS)
            .collect()
    }
}

/// Maps tokens to ids (unknown tokens to UNK); targets are wrapped in BOS/EOS.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, as_target: bool) -> TokenSequence {
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    if as_target {
        ids.push(BOS);
    }
    ids.extend(tokens.iter().map(|t| vocab.id(t.as_ref()).unwrap_or(UNK)));
    if as_target {
        ids.push(EOS);
    }
    TokenSequence { ids }
}

/// Content tokens of a sequence as strings.
pub fn decode_tokens(seq: &TokenSequence, vocab: &Vocabulary) -> Result<Vec<String>, PipelineError> {
    seq.ids
        .iter()
        .filter(|&&id| id != PAD && id != BOS && id != EOS)
        .map(|&id| {
            vocab
                .token(id)
                .map(str::to_owned)
                .ok_or(PipelineError::IdOutOfRange { id, size: vocab.len() })
        })
        .collect()
}

/// Drops PAD/BOS/EOS and joins the remaining tokens with single spaces.
pub fn decode_ids(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String, PipelineError> {
    Ok(decode_tokens(seq, vocab)?.join(" "))
}

fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Parses JSON-lines corpus text. Blank lines are skipped but still counted.
pub fn parse_corpus(text: &str) -> Result<Vec<DocumentRecord>, PipelineError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| PipelineError::ParseError {
            line,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| PipelineError::ParseError {
            line,
            message: "expected a JSON object".into(),
        })?;
        let field = |name: &str, required: bool| -> Result<Option<String>, PipelineError> {
            match obj.get(name) {
                None if required => Err(PipelineError::MissingField {
                    field: name.into(),
                    line,
                }),
                None => Ok(None),
                Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(PipelineError::ParseError {
                    line,
                    message: format!("field {name:?} must be a string"),
                }),
            }
        };
        let id = field("id", true)?.unwrap_or_default();
        let title = field("title", true)?.unwrap_or_default();
        let reference = field("reference", true)?.unwrap_or_default();
        let body = field("body", false)?;
        if id.is_empty() {
            return Err(PipelineError::ParseError {
                line,
                message: "empty id".into(),
            });
        }
        if reference.trim().is_empty() {
            return Err(PipelineError::ParseError {
                line,
                message: "empty reference".into(),
            });
        }
        if let Some(&first_line) = seen.get(&id) {
            return Err(PipelineError::DuplicateId {
                id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(id.clone(), line);
        let source = match body {
            Some(b) if !b.trim().is_empty() => b,
            _ => title.clone(),
        };
        records.push(DocumentRecord {
            id,
            title,
            source,
            reference,
        });
    }
    Ok(records)
}

pub fn load_corpus(path: &Path) -> Result<Vec<DocumentRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_corpus(&text)
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then sizes `floor(n*train)`, `floor(n*val)` and the remainder.
pub fn split_dataset<T: Clone>(records: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>, PipelineError> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(PipelineError::BadRatios(format!("{ratios:?}: ratios must be positive")));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(PipelineError::BadRatios(format!("{ratios:?}: ratios must sum to 1")));
    }
    let n = records.len();
    // The 1e-9 slack keeps products like 10 * 0.7 = 7.000000000000001 or
    // 6.999999999999999 from flooring one short.
    let n_train = ((n as f64 * tr) + 1e-9).floor() as usize;
    let n_val = (((n as f64 * va) + 1e-9).floor() as usize).min(n - n_train);
    let order = permutation(n, seed);
    let pick = |range: std::ops::Range<usize>| -> Vec<T> { order[range].iter().map(|&i| records[i].clone()).collect() };
    Ok(Split {
        train: pick(0..n_train),
        validation: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
    })
}

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
}

/// Seeded shuffle, then k contiguous validation chunks whose sizes differ by at
/// most one (the first `n % k` chunks take the extra record).
pub fn make_folds<T: Clone>(records: &[T], k: usize, seed: u64) -> Result<Vec<Fold<T>>, PipelineError> {
    let n = records.len();
    if k < 2 || n < k {
        return Err(PipelineError::TooFewRecords { n, k });
    }
    let order = permutation(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let end = start + base + usize::from(i < extra);
        let validation = order[start..end].iter().map(|&j| records[j].clone()).collect();
        let train = order[..start]
            .iter()
            .chain(&order[end..])
            .map(|&j| records[j].clone())
            .collect();
        folds.push(Fold { train, validation });
        start = end;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn set(s: &[&str]) -> HashSet<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn clean_examples() {
        assert_eq!(clean_text("Hello,\tWORLD!!"), "hello, world!!");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("p<0.05 †significant"), "p0.05 significant");
        assert_eq!(clean_text("  a \n\n b  "), "a b");
        assert_eq!(clean_text("[x] {y}"), "x y");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("the cat sat."), toks(&["the", "cat", "sat", "."]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("p0.05"), toks(&["p0", ".", "05"]));
        assert_eq!(tokenize("wow!!"), toks(&["wow", "!", "!"]));
        assert_eq!(tokenize("(12%)"), toks(&["(", "12", "%", ")"]));
    }

    #[test]
    fn stopword_examples() {
        assert_eq!(remove_stopwords(&toks(&["the", "cat"]), &set(&["the"])), toks(&["cat"]));
        assert_eq!(remove_stopwords(&toks(&["cat"]), &set(&[])), toks(&["cat"]));
        assert_eq!(remove_stopwords(&toks(&["a", "b", "a"]), &set(&["a"])), toks(&["b"]));
    }

    #[test]
    fn shipped_stoplist_has_127_words() {
        let pre = Preprocessor::default();
        assert_eq!(pre.stoplist().len(), 127);
        assert_eq!(pre.tokens("The patients were treated with Metformin."), toks(&["patients", "treated", "metformin", "."]));
    }

    fn record(id: &str, source: &str, reference: &str) -> DocumentRecord {
        DocumentRecord {
            id: id.into(),
            title: String::new(),
            source: source.into(),
            reference: reference.into(),
        }
    }

    #[test]
    fn vocabulary_threshold_and_order() {
        let pre = Preprocessor::new(Vec::new());
        let corpus = vec![record("1", "a a b", "a")];
        let v = build_vocabulary(&corpus, &pre, 2, 10).unwrap();
        assert_eq!(v.tokens(), &toks(&["<pad>", "<unk>", "<bos>", "<eos>", "a"])[..]);

        let v = build_vocabulary(&corpus, &pre, 1, 4).unwrap();
        assert_eq!(v.len(), 4);

        let corpus = vec![record("1", "y x", "x y")];
        let v = build_vocabulary(&corpus, &pre, 1, 10).unwrap();
        assert_eq!(v.id("x"), Some(4));
        assert_eq!(v.id("y"), Some(5));
    }

    #[test]
    fn vocabulary_empty_corpus() {
        let pre = Preprocessor::default();
        let corpus = vec![record("1", "the of", "and")];
        assert_eq!(build_vocabulary(&corpus, &pre, 1, 10), Err(PipelineError::EmptyCorpus));
    }

    #[test]
    fn extend_appends_and_is_idempotent() {
        let base = Vocabulary::from_token_lists([&toks(&["cell"])[..]], 1, 10).unwrap();
        assert_eq!(base.len(), 5);
        let ext = extend_vocabulary(&base, &["metformin"]);
        assert_eq!(ext.len(), 6);
        assert_eq!(ext.id("metformin"), Some(5));
        assert!(ext.domain_terms().contains("metformin"));

        let same = extend_vocabulary(&base, &["cell"]);
        assert_eq!(same.tokens(), base.tokens());
        assert!(same.domain_terms().contains("cell"));

        let twice = extend_vocabulary(&ext, &["metformin"]);
        assert_eq!(twice, ext);
    }

    #[test]
    fn encode_decode_examples() {
        let v = Vocabulary::from_token_lists([&toks(&["a"])[..]], 1, 10).unwrap();
        assert_eq!(encode(&["a"], &v, false).ids, vec![4]);
        assert_eq!(encode(&["zzz"], &v, false).ids, vec![UNK]);
        let target = encode(&["a"], &v, true);
        assert_eq!(target.ids, vec![BOS, 4, EOS]);
        assert_eq!(decode_ids(&target, &v).unwrap(), "a");
        assert_eq!(decode_ids(&TokenSequence::new(vec![0, 0]), &v).unwrap(), "");
        assert_eq!(
            decode_ids(&TokenSequence::new(vec![9]), &v),
            Err(PipelineError::IdOutOfRange { id: 9, size: 5 })
        );
    }

    #[test]
    fn vocabulary_serde_round_trip() {
        let v = extend_vocabulary(&Vocabulary::from_token_lists([&toks(&["a", "b"])[..]], 1, 10).unwrap(), &["c"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocabulary>(r#"{"tokens":["a"],"domain_terms":[]}"#).is_err());
    }

    #[test]
    fn corpus_parsing() {
        let ok = "{\"id\":\"1\",\"title\":\"T\",\"reference\":\"R\",\"body\":\"B\"}\n{\"id\":\"2\",\"title\":\"T2\",\"reference\":\"R2\",\"extra\":1}\n";
        let recs = parse_corpus(ok).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].source, "B");
        assert_eq!(recs[1].source, "T2");
        assert_eq!(recs[1].title_task().reference, "T2");

        let missing = "{\"id\":\"1\",\"title\":\"T\"}";
        assert_eq!(
            parse_corpus(missing),
            Err(PipelineError::MissingField {
                field: "reference".into(),
                line: 1
            })
        );

        let lines: Vec<String> = (1..=7)
            .map(|i| {
                let id = if i == 7 { 3 } else { i };
                format!("{{\"id\":\"{id}\",\"title\":\"t\",\"reference\":\"r\"}}")
            })
            .collect();
        assert_eq!(
            parse_corpus(&lines.join("\n")),
            Err(PipelineError::DuplicateId {
                id: "3".into(),
                first_line: 3,
                second_line: 7
            })
        );
        assert!(matches!(parse_corpus("not json"), Err(PipelineError::ParseError { line: 1, .. })));
    }

    #[test]
    fn split_sizes_and_partition() {
        let recs: Vec<usize> = (0..10).collect();
        let s = split_dataset(&recs, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_dataset(&recs, (0.8, 0.1, 0.1), 42).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, recs);
        assert!(matches!(split_dataset(&recs, (0.5, 0.5, 0.5), 1), Err(PipelineError::BadRatios(_))));
        assert!(matches!(split_dataset(&recs, (1.0, 0.0, 0.0), 1), Err(PipelineError::BadRatios(_))));
    }

    #[test]
    fn fold_chunk_sizes() {
        let recs: Vec<usize> = (0..10).collect();
        let folds = make_folds(&recs, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.validation.len() == 2 && f.train.len() == 8));

        let recs: Vec<usize> = (0..7).collect();
        let sizes: Vec<usize> = make_folds(&recs, 5, 1).unwrap().iter().map(|f| f.validation.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);

        assert_eq!(make_folds(&recs, 8, 1), Err(PipelineError::TooFewRecords { n: 7, k: 8 }));
        assert!(make_folds(&recs, 1, 1).is_err());
    }
}
