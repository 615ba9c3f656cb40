use super::{ModelConfig, ModelError, ModelParams, Network};
use crate::numeric::Scalar;
use crate::rng::Lcg;
use crate::text::{TokenSequence, UNK};

/// Sorted positions to mask: `ceil(mask_prob * len)` distinct indices chosen by `rng`.
pub fn mask_positions(len: usize, mask_prob: f64, rng: &mut Lcg) -> Vec<usize> {
    let k = ((mask_prob * len as f64).ceil() as usize).min(len);
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// One masked-token step: masked positions are replaced by UNK, the encoder
/// output there goes through `W_o, b`, and the loss is the mean cross-entropy
/// over masked positions. Gradients are added to `params`' grad buffers; the
/// caller zeroes them and applies the update.
pub fn mlm_pretrain_step<S: Scalar>(
    batch: &[TokenSequence],
    params: &mut ModelParams<S>,
    config: &ModelConfig,
    mask_prob: f64,
    seed: u64,
) -> Result<f64, ModelError> {
    if batch.is_empty() || batch.iter().all(|s| s.is_empty()) {
        return Err(ModelError::EmptyBatch);
    }
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(ModelError::InvalidConfig(format!("mask_prob must lie in (0, 1), got {mask_prob}")));
    }
    let mut net = Network::new(params, config);
    let mut terms = Vec::new();
    for (k, seq) in batch.iter().enumerate() {
        if seq.is_empty() {
            continue;
        }
        let mut rng = Lcg::derive(seed, k as u64);
        let masked = mask_positions(seq.len(), mask_prob, &mut rng);
        let mut ids = seq.ids.clone();
        for &p in &masked {
            ids[p] = UNK;
        }
        let enc = net.encode(&TokenSequence::new(ids))?;
        for &p in &masked {
            let logits = net.encoder_logits(&enc, p)?;
            let probs = net.tape.softmax(logits)?;
            terms.push(net.tape.cross_entropy(probs, seq.ids[p])?);
        }
    }
    let total = net.tape.add_n(&terms)?;
    let loss = net.tape.scale(total, 1.0 / terms.len() as f64)?;
    net.tape.backward_into(loss, params)?;
    Ok(net.tape.scalar(loss).as_f64())
}
