use super::{DecoderState, EncoderOutput, ModelConfig, ModelError, ModelParams, Network};
use crate::numeric::{Scalar, Var};
use crate::text::{TokenSequence, BOS, EOS, PAD};

/// A decoded sequence with its log-probability under the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// `[BOS, tokens.., EOS]`
    pub sequence: TokenSequence,
    /// Sum of log-probabilities of every emitted token (an EOS appended at the
    /// length cap is not scored).
    pub log_prob: f64,
    /// Number of scored tokens.
    pub length: usize,
}

impl Decoded {
    /// Length-normalised score, `log_prob / length`.
    pub fn score(&self) -> f64 {
        self.log_prob / self.length.max(1) as f64
    }
}

/// True if appending `next` to `prefix` repeats a trigram already in `prefix`.
fn completes_repeated_trigram(prefix: &[usize], next: usize) -> bool {
    let n = prefix.len();
    if n < 2 {
        return false;
    }
    let (a, b) = (prefix[n - 2], prefix[n - 1]);
    prefix.windows(3).any(|w| w == [a, b, next])
}

struct Hypothesis {
    tokens: Vec<usize>,
    state: DecoderState,
    log_prob: f64,
}

struct Decoder<'c, S: Scalar> {
    net: Network<'c, S>,
    enc: EncoderOutput,
}

impl<'c, S: Scalar> Decoder<'c, S> {
    fn new(source: &TokenSequence, params: &ModelParams<S>, config: &'c ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut net = Network::new(params, config);
        let enc = net.encode(source)?;
        Ok(Self { net, enc })
    }

    /// One step from `hyp`: next state plus masked log-probabilities (PAD, BOS
    /// and, with coverage on, trigram repeats set to `-inf`).
    fn expand(&mut self, hyp: &Hypothesis) -> Result<(DecoderState, Vec<f64>), ModelError> {
        let (attn, ctx) = self.net.attention_step(&self.enc, &hyp.state)?;
        let total: f64 = self.net.tape.value(attn.alpha).iter().map(|a| a.as_f64()).sum();
        debug_assert!((total - 1.0).abs() < 1e-6, "attention mass {total}");
        let prev = *hyp.tokens.last().unwrap_or(&BOS);
        let (next, logits) = self.net.decoder_step(prev, &hyp.state, ctx, &attn)?;
        let lp: Var = self.net.tape.log_softmax(logits)?;
        let mut log_probs: Vec<f64> = self.net.tape.value(lp).iter().map(|v| v.as_f64()).collect();
        log_probs[PAD] = f64::NEG_INFINITY;
        log_probs[BOS] = f64::NEG_INFINITY;
        if self.net.config.coverage_enabled {
            for (tok, lp) in log_probs.iter_mut().enumerate() {
                if tok != EOS && completes_repeated_trigram(&hyp.tokens, tok) {
                    *lp = f64::NEG_INFINITY;
                }
            }
        }
        Ok((next, log_probs))
    }

    fn root(&mut self) -> Result<Hypothesis, ModelError> {
        Ok(Hypothesis {
            tokens: Vec::new(),
            state: self.net.initial_state(&self.enc)?,
            log_prob: 0.0,
        })
    }
}

fn finish(tokens: &[usize], log_prob: f64) -> Decoded {
    let length = tokens.len();
    let mut ids = Vec::with_capacity(length + 2);
    ids.push(BOS);
    ids.extend_from_slice(tokens);
    if ids.last() != Some(&EOS) {
        ids.push(EOS);
    }
    Decoded {
        sequence: TokenSequence::new(ids),
        log_prob,
        length,
    }
}

/// Argmax with ties going to the lowest id; `None` if everything is masked.
fn argmax(log_probs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in log_probs.iter().enumerate() {
        if v > f64::NEG_INFINITY && best.is_none_or(|b| v > log_probs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Greedy decoding with the sequence log-probability.
pub fn greedy_decode_scored<S: Scalar>(
    source: &TokenSequence,
    params: &ModelParams<S>,
    config: &ModelConfig,
) -> Result<Decoded, ModelError> {
    let mut dec = Decoder::new(source, params, config)?;
    let mut hyp = dec.root()?;
    while hyp.tokens.len() < config.max_target_len {
        let (state, log_probs) = dec.expand(&hyp)?;
        let tok = argmax(&log_probs).unwrap_or(EOS);
        hyp.log_prob += log_probs[tok];
        hyp.tokens.push(tok);
        hyp.state = state;
        if tok == EOS {
            break;
        }
    }
    Ok(finish(&hyp.tokens, hyp.log_prob))
}

/// Starts at BOS, picks the most probable token each step (ties to the lowest
/// id), stops at EOS or after `max_target_len` steps.
pub fn greedy_decode<S: Scalar>(source: &TokenSequence, params: &ModelParams<S>, config: &ModelConfig) -> Result<TokenSequence, ModelError> {
    greedy_decode_scored(source, params, config).map(|d| d.sequence)
}

/// Beam search ranked by length-normalised log-probability. Candidates are
/// ordered by (normalised score, raw log-prob) descending, then (beam, token)
/// ascending, so width 1 reproduces greedy decoding.
pub fn beam_decode_scored<S: Scalar>(
    source: &TokenSequence,
    params: &ModelParams<S>,
    config: &ModelConfig,
    beam_width: usize,
) -> Result<Decoded, ModelError> {
    if beam_width == 0 {
        return Err(ModelError::InvalidConfig("beam_width must be at least 1".into()));
    }
    let mut dec = Decoder::new(source, params, config)?;
    let mut beams = vec![dec.root()?];
    let mut finished: Vec<Decoded> = Vec::new();

    while !beams.is_empty() {
        let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(beams.len());
        for (b, hyp) in beams.iter().enumerate() {
            let (state, log_probs) = dec.expand(hyp)?;
            let len = (hyp.tokens.len() + 1) as f64;
            let mut any = false;
            for (tok, &lp) in log_probs.iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    any = true;
                    let total = hyp.log_prob + lp;
                    candidates.push((total / len, total, b, tok));
                }
            }
            if !any {
                candidates.push((hyp.log_prob / len, hyp.log_prob, b, EOS));
            }
            next_states.push(state);
        }
        candidates.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(y.1.total_cmp(&x.1))
                .then(x.2.cmp(&y.2))
                .then(x.3.cmp(&y.3))
        });
        candidates.truncate(beam_width);

        let mut survivors = Vec::new();
        for (_, total, b, tok) in candidates {
            let mut tokens = beams[b].tokens.clone();
            tokens.push(tok);
            if tok == EOS || tokens.len() >= config.max_target_len {
                finished.push(finish(&tokens, total));
            } else {
                survivors.push(Hypothesis {
                    tokens,
                    state: next_states[b],
                    log_prob: total,
                });
            }
        }
        beams = survivors;
    }

    let best = finished
        .into_iter()
        .reduce(|best, d| {
            let better = d.score() > best.score() || (d.score() == best.score() && d.log_prob > best.log_prob);
            if better {
                d
            } else {
                best
            }
        })
        .expect("beam search always finishes at least one hypothesis");
    Ok(best)
}

pub fn beam_decode<S: Scalar>(
    source: &TokenSequence,
    params: &ModelParams<S>,
    config: &ModelConfig,
    beam_width: usize,
) -> Result<TokenSequence, ModelError> {
    beam_decode_scored(source, params, config, beam_width).map(|d| d.sequence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize, max_target_len: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            embed_dim: 6,
            hidden_dim: 8,
            attention_dim: 4,
            encoder_layers: 1,
            max_target_len,
            seed,
            ..ModelConfig::fixture(vocab)
        }
    }

    fn src() -> TokenSequence {
        TokenSequence::new(vec![4, 5, 6, 1])
    }

    #[test]
    fn trigram_detection() {
        assert!(completes_repeated_trigram(&[4, 5, 6, 4, 5], 6));
        assert!(!completes_repeated_trigram(&[4, 5, 6, 4, 5], 7));
        assert!(!completes_repeated_trigram(&[4], 4));
    }

    #[test]
    fn greedy_output_is_wrapped_and_capped() {
        for seed in 1..6 {
            let cfg = tiny(12, 1, seed);
            let params = ModelParams::<f32>::init(&cfg);
            let out = greedy_decode(&src(), &params, &cfg).unwrap();
            assert_eq!(out.ids[0], BOS);
            assert_eq!(*out.ids.last().unwrap(), EOS);
            assert!(out.content().len() <= 1);
        }
    }

    #[test]
    fn greedy_is_deterministic_and_never_emits_pad_or_bos() {
        let cfg = tiny(12, 10, 3);
        let params = ModelParams::<f32>::init(&cfg);
        let a = greedy_decode(&src(), &params, &cfg).unwrap();
        let b = greedy_decode(&src(), &params, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.ids[1..].iter().all(|&t| t != PAD && t != BOS));
    }

    #[test]
    fn width_one_matches_greedy() {
        for seed in 1..10 {
            let cfg = ModelConfig {
                coverage_enabled: seed % 2 == 0,
                ..tiny(9, 8, seed)
            };
            let params = ModelParams::<f32>::init(&cfg);
            let g = greedy_decode_scored(&src(), &params, &cfg).unwrap();
            let b = beam_decode_scored(&src(), &params, &cfg, 1).unwrap();
            assert_eq!(g, b);
        }
    }

    #[test]
    fn wider_beam_scores_at_least_greedy() {
        for seed in 1..10 {
            let cfg = tiny(10, 6, seed);
            let params = ModelParams::<f32>::init(&cfg);
            let g = greedy_decode_scored(&src(), &params, &cfg).unwrap();
            let b = beam_decode_scored(&src(), &params, &cfg, 4).unwrap();
            assert!(b.score() >= g.score() - 1e-9, "seed {seed}: {} < {}", b.score(), g.score());
        }
    }

    /// Scores every sequence reachable in at most `max_len` steps.
    fn exhaustive(source: &TokenSequence, params: &ModelParams<f64>, cfg: &ModelConfig) -> Decoded {
        let mut dec = Decoder::new(source, params, cfg).unwrap();
        let mut stack = vec![dec.root().unwrap()];
        let mut best: Option<Decoded> = None;
        while let Some(hyp) = stack.pop() {
            let (state, log_probs) = dec.expand(&hyp).unwrap();
            for (tok, &lp) in log_probs.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                let total = hyp.log_prob + lp;
                if tok == EOS || tokens.len() == cfg.max_target_len {
                    let d = finish(&tokens, total);
                    if best.as_ref().is_none_or(|b| d.score() > b.score()) {
                        best = Some(d);
                    }
                } else {
                    stack.push(Hypothesis {
                        tokens,
                        state,
                        log_prob: total,
                    });
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn wide_beam_equals_exhaustive_search() {
        // vocabulary of 5 leaves 3 emittable tokens (UNK, EOS, one word)
        for seed in 1..20 {
            let cfg = tiny(5, 3, seed);
            let params = ModelParams::<f64>::init(&cfg);
            let source = TokenSequence::new(vec![4, 1, 4]);
            let brute = exhaustive(&source, &params, &cfg);
            let beam = beam_decode_scored(&source, &params, &cfg, 27).unwrap();
            assert_eq!(beam.sequence, brute.sequence, "seed {seed}");
            assert!((beam.score() - brute.score()).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_blocks_repeated_trigrams() {
        for seed in 1..8 {
            let cfg = ModelConfig {
                coverage_enabled: true,
                ..tiny(7, 30, seed)
            };
            let params = ModelParams::<f32>::init(&cfg);
            for width in [1, 3] {
                let out = beam_decode(&src(), &params, &cfg, width).unwrap();
                let content = out.content();
                let mut seen = std::collections::HashSet::new();
                for w in content.windows(3) {
                    assert!(seen.insert(w.to_vec()), "repeated trigram {w:?}");
                }
            }
        }
    }

    #[test]
    fn zero_width_is_rejected() {
        let cfg = tiny(8, 4, 1);
        let params = ModelParams::<f32>::init(&cfg);
        assert!(matches!(beam_decode(&src(), &params, &cfg, 0), Err(ModelError::InvalidConfig(_))));
    }
}
