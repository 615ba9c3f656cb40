//! Seeded toy corpora for directional experiments.

use crate::rng::Lcg;
use crate::text::DocumentRecord;

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "v"];
const NUCLEI: [&str; 4] = ["a", "e", "u", "o"];

/// `n` distinct two-syllable pseudo-words (`bake`, `dumo`, ...), none of them stopwords.
pub fn pseudo_words(n: usize) -> Vec<String> {
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| NUCLEI.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut out = Vec::with_capacity(n);
    'outer: for (i, a) in syllables.iter().enumerate() {
        for b in syllables.iter().skip((i * 7) % syllables.len()).chain(syllables.iter()) {
            if out.len() == n {
                break 'outer;
            }
            let w = format!("{a}{b}");
            if !out.contains(&w) {
                out.push(w);
                continue 'outer;
            }
        }
    }
    assert_eq!(out.len(), n, "pseudo-word pool too small");
    out
}

fn record(prefix: &str, i: usize, source: &[String], reference: &[String]) -> DocumentRecord {
    DocumentRecord {
        id: format!("{prefix}{i:03}"),
        title: String::new(),
        source: source.join(" "),
        reference: reference.join(" "),
    }
}

/// Copy-summarization: the source is `source_len` random words and the
/// summary repeats its first `summary_len` words.
pub fn copy_task(n: usize, vocab: usize, source_len: usize, summary_len: usize, seed: u64) -> Vec<DocumentRecord> {
    let words = pseudo_words(vocab);
    let mut rng = Lcg::new(seed);
    (0..n)
        .map(|i| {
            let src: Vec<String> = (0..source_len).map(|_| words[rng.below(vocab)].clone()).collect();
            record("copy", i, &src, &src[..summary_len.min(source_len)])
        })
        .collect()
}

/// Repetition-prone summaries: each reference states a short phrase from
/// the source twice, followed by one closing word.
pub fn repetition_task(n: usize, vocab: usize, seed: u64) -> Vec<DocumentRecord> {
    let words = pseudo_words(vocab);
    let mut rng = Lcg::new(seed);
    (0..n)
        .map(|i| {
            let src: Vec<String> = (0..8).map(|_| words[rng.below(vocab)].clone()).collect();
            let phrase = &src[..3];
            let reference: Vec<String> = phrase.iter().chain(phrase).chain(&src[7..8]).cloned().collect();
            record("rep", i, &src, &reference)
        })
        .collect()
}

/// Twenty short clinical sentences for masked-token pretraining.
pub fn mlm_sentences() -> Vec<String> {
    [
        "metformin lowers fasting glucose in type 2 diabetes",
        "insulin therapy improves glucose control in type 1 diabetes",
        "hypertension increases the risk of stroke and heart failure",
        "statin therapy lowers cholesterol and cardiovascular risk",
        "aspirin reduces platelet aggregation and may cause bleeding",
        "antibiotics treat bacterial pneumonia in hospitalized patients",
        "exercise improves mood and sleep in older adults",
        "vitamin d and calcium support bone health in elderly people",
        "inhaled corticosteroids control persistent asthma in children",
        "smoking cessation lowers the risk of lung cancer",
        "metformin may cause mild gastrointestinal side effects",
        "insulin pumps reduce severe hypoglycemia in adolescents",
        "blood pressure control prevents stroke in hypertension",
        "statins are well tolerated by most patients",
        "pneumonia often requires hospital care in elderly patients",
        "aerobic exercise reduces depressive symptoms",
        "calcium intake supports bone density",
        "asthma education reduces emergency visits",
        "randomized trials compare treatment with placebo",
        "diabetes increases the risk of heart disease",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}
