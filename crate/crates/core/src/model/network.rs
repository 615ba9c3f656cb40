use super::{ModelConfig, ModelError, ModelParams, Slots};
use crate::numeric::{Scalar, Tape, Var};
use crate::text::{TokenSequence, BOS, EOS};

/// Context matrix `H` (one row per source position) plus cached projections.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[n, hidden_dim]`
    pub h: Var,
    pub len: usize,
    pub source: Vec<usize>,
    /// Row-normalised self-attention matrix of each encoder layer.
    pub self_attention: Vec<Var>,
    /// `H W_h^T`, shared by every decoding step.
    keys: Option<Var>,
    mean: Var,
}

/// Decoder hidden state `s_t` together with the coverage vector.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub s: Var,
    /// Completed decoding steps.
    pub t: usize,
    /// Sum of all attention distributions used so far, `[n]`.
    pub coverage: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub alpha: Var,
    pub scores: Var,
}

/// Summed per-step terms of one teacher-forced sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceLoss {
    pub cross_entropy: Var,
    pub coverage: Var,
    pub steps: usize,
}

/// A tape with the model parameters bound to it.
pub struct Network<'c, S: Scalar = f32> {
    pub tape: Tape<S>,
    pub config: &'c ModelConfig,
    slots: Slots,
    vars: Vec<Var>,
}

fn positional_encoding<S: Scalar>(len: usize, dim: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out.push(S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

/// `sum_i min(alpha_i, c_i)`.
pub fn coverage_loss<S: Scalar>(tape: &mut Tape<S>, alpha: Var, coverage: Var) -> Result<Var, ModelError> {
    let m = tape.min(alpha, coverage)?;
    Ok(tape.sum(m)?)
}

impl<'c, S: Scalar> Network<'c, S> {
    pub fn new(params: &ModelParams<S>, config: &'c ModelConfig) -> Self {
        let mut tape = Tape::new();
        let vars = tape.params(params);
        Self {
            tape,
            config,
            slots: params.slots().clone(),
            vars,
        }
    }

    /// Hands over the tape, e.g. to read values after the network is done.
    pub fn into_tape(self) -> Tape<S> {
        self.tape
    }

    fn p(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn check_token(&self, id: usize) -> Result<(), ModelError> {
        if id >= self.config.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Bidirectional encoder: scaled embeddings plus sinusoidal positions, an
    /// input projection, then `encoder_layers` blocks of single-head
    /// self-attention and a GELU feed-forward, each with a residual add.
    pub fn encode(&mut self, source: &TokenSequence) -> Result<EncoderOutput, ModelError> {
        let n = source.len();
        if n == 0 {
            return Err(ModelError::EmptySource);
        }
        if n > self.config.max_source_len {
            return Err(ModelError::SourceTooLong {
                len: n,
                max: self.config.max_source_len,
            });
        }
        for &id in &source.ids {
            self.check_token(id)?;
        }
        let (e_dim, h_dim) = (self.config.embed_dim, self.config.hidden_dim);
        let t = &mut self.tape;
        let emb = t.gather_rows(self.vars[self.slots.embedding], &source.ids)?;
        let emb = t.scale(emb, (e_dim as f64).sqrt())?;
        let pe = t.constant(vec![n, e_dim], positional_encoding(n, e_dim))?;
        let x = t.add(emb, pe)?;
        let mut h = t.linear(x, self.vars[self.slots.input_w], Some(self.vars[self.slots.input_b]))?;

        let mut self_attention = Vec::with_capacity(self.slots.layers.len());
        for layer in &self.slots.layers {
            let v = |s: usize| self.vars[s];
            let q = t.linear(h, v(layer.wq), None)?;
            let k = t.linear(h, v(layer.wk), None)?;
            let val = t.linear(h, v(layer.wv), None)?;
            let scores = t.matmul_nt(q, k)?;
            let scores = t.scale(scores, 1.0 / (h_dim as f64).sqrt())?;
            let attn = t.softmax_rows(scores)?;
            let mixed = t.matmul(attn, val)?;
            let mixed = t.linear(mixed, v(layer.wo), None)?;
            h = t.add(h, mixed)?;
            let ff = t.linear(h, v(layer.ff1_w), Some(v(layer.ff1_b)))?;
            let ff = t.gelu(ff)?;
            let ff = t.linear(ff, v(layer.ff2_w), Some(v(layer.ff2_b)))?;
            h = t.add(h, ff)?;
            self_attention.push(attn);
        }
        self.encoder_output(h, source.ids.clone(), self_attention)
    }

    /// Wraps an externally supplied context matrix `[n, hidden_dim]`.
    pub fn encoder_output_from(&mut self, h: Var) -> Result<EncoderOutput, ModelError> {
        let shape = self.tape.shape(h).to_vec();
        if shape.len() != 2 || shape[1] != self.config.hidden_dim {
            return Err(crate::numeric::NumericError::ShapeMismatch {
                op: "encoder_output",
                detail: format!("{shape:?}"),
            }
            .into());
        }
        self.encoder_output(h, vec![crate::text::UNK; shape[0]], Vec::new())
    }

    fn encoder_output(&mut self, h: Var, source: Vec<usize>, self_attention: Vec<Var>) -> Result<EncoderOutput, ModelError> {
        let keys = if self.config.attention_enabled {
            Some(self.tape.linear(h, self.p(self.slots.attn_wh), None)?)
        } else {
            None
        };
        let mean = self.tape.mean_rows(h)?;
        Ok(EncoderOutput {
            h,
            len: source.len(),
            source,
            self_attention,
            keys,
            mean,
        })
    }

    /// `s_0 = tanh(W_bridge mean(H) + b_bridge)`, zero coverage.
    pub fn initial_state(&mut self, enc: &EncoderOutput) -> Result<DecoderState, ModelError> {
        let pre = self.tape.affine(self.p(self.slots.bridge_w), enc.mean, self.p(self.slots.bridge_b))?;
        let s = self.tape.tanh(pre)?;
        let coverage = self.tape.zeros(vec![enc.len]);
        Ok(DecoderState { s, t: 0, coverage })
    }

    /// Additive attention over `H` given `s_t`; returns the weights and the
    /// context vector `sum_i alpha_i h_i`.
    pub fn attention_step(&mut self, enc: &EncoderOutput, state: &DecoderState) -> Result<(AttentionWeights, Var), ModelError> {
        let n = enc.len;
        let Some(keys) = enc.keys else {
            let alpha = self.tape.constant(vec![n], vec![S::one() / S::of(n as f64); n])?;
            let scores = self.tape.zeros(vec![n]);
            return Ok((AttentionWeights { alpha, scores }, enc.mean));
        };
        let t = &mut self.tape;
        let query = t.affine(self.vars[self.slots.attn_ws], state.s, self.vars[self.slots.attn_b])?;
        let mut pre = t.add_row(keys, query)?;
        if self.config.coverage_enabled {
            let cov = t.outer(state.coverage, self.vars[self.slots.attn_wc])?;
            pre = t.add(pre, cov)?;
        }
        let act = t.tanh(pre)?;
        let scores = t.matvec(act, self.vars[self.slots.attn_v])?;
        let alpha = t.softmax(scores)?;
        let context = t.vecmat(alpha, enc.h)?;
        Ok((AttentionWeights { alpha, scores }, context))
    }

    /// GRU update over `[E[prev] ; context ; s_{t-1}]`, then `logits = W_o s_t + b`.
    pub fn decoder_step(
        &mut self,
        prev_token: usize,
        state: &DecoderState,
        context: Var,
        attention: &AttentionWeights,
    ) -> Result<(DecoderState, Var), ModelError> {
        self.check_token(prev_token)?;
        let v = |s: usize| self.vars[s];
        let sl = &self.slots;
        let t = &mut self.tape;
        let emb = t.row(v(sl.embedding), prev_token)?;
        let joint = t.concat(&[emb, context, state.s])?;
        let z = t.affine(v(sl.gru_z_w), joint, v(sl.gru_z_b))?;
        let z = t.sigmoid(z)?;
        let r = t.affine(v(sl.gru_r_w), joint, v(sl.gru_r_b))?;
        let r = t.sigmoid(r)?;
        let gated = t.mul(r, state.s)?;
        let cand_in = t.concat(&[emb, context, gated])?;
        let cand = t.affine(v(sl.gru_c_w), cand_in, v(sl.gru_c_b))?;
        let cand = t.tanh(cand)?;
        let delta = t.sub(cand, state.s)?;
        let delta = t.mul(z, delta)?;
        let s = t.add(state.s, delta)?;
        let logits = t.affine(v(sl.out_w), s, v(sl.out_b))?;
        let coverage = t.add(state.coverage, attention.alpha)?;
        Ok((
            DecoderState {
                s,
                t: state.t + 1,
                coverage,
            },
            logits,
        ))
    }

    /// Encoder-side logits `W_o h_i + b` at one source position (masked-token objective).
    pub fn encoder_logits(&mut self, enc: &EncoderOutput, position: usize) -> Result<Var, ModelError> {
        let row = self.tape.row(enc.h, position)?;
        Ok(self.tape.affine(self.p(self.slots.out_w), row, self.p(self.slots.out_b))?)
    }

    /// Teacher-forced pass over `target` (BOS ... EOS). Returns the summed
    /// cross-entropy and coverage terms; `on_logits` sees each step's logits and
    /// gold token (used for distillation).
    pub fn sequence_loss(
        &mut self,
        source: &TokenSequence,
        target: &TokenSequence,
        mut on_logits: impl FnMut(&mut Tape<S>, usize, Var, usize) -> Result<Option<Var>, ModelError>,
    ) -> Result<(SequenceLoss, Vec<Var>), ModelError> {
        let ids = &target.ids;
        if ids.len() < 2 || ids[0] != BOS || ids[ids.len() - 1] != EOS {
            return Err(ModelError::InvalidConfig("target must be BOS ... EOS wrapped".into()));
        }
        let steps = ids.len() - 1;
        if steps > self.config.max_target_len {
            return Err(ModelError::LengthOverflow {
                steps,
                max: self.config.max_target_len,
            });
        }
        let enc = self.encode(source)?;
        let mut state = self.initial_state(&enc)?;
        let mut ce_terms = Vec::with_capacity(steps);
        let mut cov_terms = Vec::with_capacity(steps);
        let mut extra_terms = Vec::new();
        for step in 0..steps {
            let (attn, ctx) = self.attention_step(&enc, &state)?;
            if self.config.coverage_weight > 0.0 {
                cov_terms.push(coverage_loss(&mut self.tape, attn.alpha, state.coverage)?);
            }
            let (next, logits) = self.decoder_step(ids[step], &state, ctx, &attn)?;
            let gold = ids[step + 1];
            self.check_token(gold)?;
            let probs = self.tape.softmax(logits)?;
            ce_terms.push(self.tape.cross_entropy(probs, gold)?);
            if let Some(extra) = on_logits(&mut self.tape, step, logits, gold)? {
                extra_terms.push(extra);
            }
            state = next;
        }
        let cross_entropy = self.tape.add_n(&ce_terms)?;
        let coverage = if cov_terms.is_empty() {
            self.tape.zeros(vec![1])
        } else {
            self.tape.add_n(&cov_terms)?
        };
        Ok((
            SequenceLoss {
                cross_entropy,
                coverage,
                steps,
            },
            extra_terms,
        ))
    }
}
