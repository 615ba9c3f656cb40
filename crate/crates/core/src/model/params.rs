use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::numeric::{ParameterSet, Scalar, Tensor};
use crate::rng::Lcg;

/// Name and shape of one parameter tensor in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlots {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
}

/// Slot index of every named parameter inside [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slots {
    pub embedding: usize,
    pub input_w: usize,
    pub input_b: usize,
    pub layers: Vec<LayerSlots>,
    pub bridge_w: usize,
    pub bridge_b: usize,
    pub attn_wh: usize,
    pub attn_ws: usize,
    pub attn_b: usize,
    pub attn_v: usize,
    pub attn_wc: usize,
    pub gru_z_w: usize,
    pub gru_z_b: usize,
    pub gru_r_w: usize,
    pub gru_r_b: usize,
    pub gru_c_w: usize,
    pub gru_c_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

struct LayoutBuilder {
    specs: Vec<(ParamSpec, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((
            ParamSpec {
                name: name.into(),
                shape,
            },
            init,
        ));
        self.specs.len() - 1
    }
}

fn layout(config: &ModelConfig) -> (Slots, Vec<(ParamSpec, Init)>) {
    use Init::*;
    let (v, e, h, a, f) = (
        config.vocab_size,
        config.embed_dim,
        config.hidden_dim,
        config.attention_dim,
        config.ff_dim(),
    );
    let gru_in = e + 2 * h;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let embedding = b.add("embedding", vec![v, e], Xavier);
    let input_w = b.add("encoder.input.weight", vec![h, e], Xavier);
    let input_b = b.add("encoder.input.bias", vec![h], Zeros);
    let layers = (0..config.encoder_layers)
        .map(|l| LayerSlots {
            wq: b.add(format!("encoder.layer{l}.query"), vec![h, h], Xavier),
            wk: b.add(format!("encoder.layer{l}.key"), vec![h, h], Xavier),
            wv: b.add(format!("encoder.layer{l}.value"), vec![h, h], Xavier),
            wo: b.add(format!("encoder.layer{l}.output"), vec![h, h], Xavier),
            ff1_w: b.add(format!("encoder.layer{l}.ff1.weight"), vec![f, h], Xavier),
            ff1_b: b.add(format!("encoder.layer{l}.ff1.bias"), vec![f], Zeros),
            ff2_w: b.add(format!("encoder.layer{l}.ff2.weight"), vec![h, f], Xavier),
            ff2_b: b.add(format!("encoder.layer{l}.ff2.bias"), vec![h], Zeros),
        })
        .collect();
    let slots = Slots {
        embedding,
        input_w,
        input_b,
        layers,
        bridge_w: b.add("decoder.bridge.weight", vec![h, h], Xavier),
        bridge_b: b.add("decoder.bridge.bias", vec![h], Zeros),
        attn_wh: b.add("attention.w_h", vec![a, h], Xavier),
        attn_ws: b.add("attention.w_s", vec![a, h], Xavier),
        attn_b: b.add("attention.b_a", vec![a], Zeros),
        attn_v: b.add("attention.v", vec![a], Xavier),
        attn_wc: b.add("attention.w_c", vec![a], Xavier),
        gru_z_w: b.add("decoder.update.weight", vec![h, gru_in], Xavier),
        gru_z_b: b.add("decoder.update.bias", vec![h], Zeros),
        gru_r_w: b.add("decoder.reset.weight", vec![h, gru_in], Xavier),
        gru_r_b: b.add("decoder.reset.bias", vec![h], Zeros),
        gru_c_w: b.add("decoder.candidate.weight", vec![h, gru_in], Xavier),
        gru_c_b: b.add("decoder.candidate.bias", vec![h], Zeros),
        out_w: b.add("output.w_o", vec![v, h], Xavier),
        out_b: b.add("output.b", vec![v], Zeros),
    };
    (slots, b.specs)
}

/// All trainable tensors of the summarizer, stored in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Scalar = f32> {
    tensors: Vec<Tensor<S>>,
    specs: Vec<ParamSpec>,
    slots: Slots,
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded initialisation: matrices and projection vectors uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero. A vector `[n]` counts as `[1, n]`.
    pub fn init(config: &ModelConfig) -> Self {
        let (slots, specs) = layout(config);
        let mut rng = Lcg::new(config.seed);
        let tensors = specs
            .iter()
            .map(|(spec, init)| match init {
                Init::Zeros => Tensor::zeros(spec.shape.clone()),
                Init::Xavier => {
                    let (fan_out, fan_in) = match spec.shape[..] {
                        [r, c] => (r, c),
                        [n] => (1, n),
                        _ => unreachable!("parameters are vectors or matrices"),
                    };
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::uniform(spec.shape.clone(), bound, &mut rng)
                }
            })
            .collect();
        Self {
            tensors,
            specs: specs.into_iter().map(|(s, _)| s).collect(),
            slots,
        }
    }

    /// Rebuilds parameters from values laid out in manifest order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<S>>) -> Result<Self, String> {
        let (slots, specs) = layout(config);
        if specs.len() != tensors.len() {
            return Err(format!("expected {} tensors, got {}", specs.len(), tensors.len()));
        }
        for ((spec, _), t) in specs.iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(format!("{}: expected shape {:?}, got {:?}", spec.name, spec.shape, t.shape()));
            }
        }
        Ok(Self {
            tensors,
            specs: specs.into_iter().map(|(s, _)| s).collect(),
            slots,
        })
    }

    /// Canonical manifest (names and shapes) for a configuration.
    pub fn manifest_for(config: &ModelConfig) -> Vec<ParamSpec> {
        layout(config).1.into_iter().map(|(s, _)| s).collect()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn slots(&self) -> &Slots {
        &self.slots
    }

    pub fn get(&self, slot: usize) -> &Tensor<S> {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor<S> {
        &mut self.tensors[slot]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            specs: self.specs.clone(),
            slots: self.slots.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.values().iter().all(|v| v.is_finite()))
    }
}

impl<S: Scalar> ParameterSet<S> for ModelParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        self.tensors.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.tensors.iter_mut().collect()
    }
}
