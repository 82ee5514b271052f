use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::embeddings::EncoderKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gate suffixes of a peephole-free LSTM, in storage order.
pub const GATES: [&str; 4] = ["input", "forget", "output", "cell"];

pub const SENTENCE_LSTM: &str = "lstm";
pub const CANDIDATE_LSTM: &str = "cand";

pub const FILM_W_GAMMA: &str = "film.w_gamma";
pub const FILM_B_GAMMA: &str = "film.b_gamma";
pub const FILM_W_BETA: &str = "film.w_beta";
pub const FILM_B_BETA: &str = "film.b_beta";
/// The contextual-modulator tensors, the only ones under L2 penalty.
pub const MODULATOR: [&str; 4] = [FILM_W_GAMMA, FILM_B_GAMMA, FILM_W_BETA, FILM_B_BETA];

pub const ATTN_W: &str = "attn.w";
pub const ATTN_B: &str = "attn.b";
pub const ATTN_U: &str = "attn.u";
pub const OUT_W: &str = "out.w";
pub const OUT_B: &str = "out.b";

pub fn lstm_name(prefix: &str, kind: &str, gate: &str) -> String {
    format!("{prefix}.{kind}_{gate}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named learnable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    params: Vec<Param>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.params.iter_mut().find(|p| p.name == name) {
            Some(p) => p.value = value,
            None => self.params.push(Param { name, value }),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Contract {
            op: "params",
            reason: format!("missing parameter {name}"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor::zeros(p.value.shape()),
                })
                .collect(),
        }
    }

    /// Checks names and shapes against what `cfg` requires.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = param_shapes(cfg);
        if expected.len() != self.params.len() {
            return Err(Error::contract(
                "params",
                format!(
                    "expected {} tensors for {:?}, found {}",
                    expected.len(),
                    cfg.variant,
                    self.params.len()
                ),
            ));
        }
        for (name, shape) in expected {
            let t = self.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "params",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { what: name });
            }
        }
        Ok(())
    }
}

fn lstm_shapes(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d_in: usize, d_hidden: usize) {
    for gate in GATES {
        out.push((lstm_name(prefix, "w_x", gate), alloc::vec![d_in, d_hidden]));
    }
    for gate in GATES {
        out.push((lstm_name(prefix, "w_h", gate), alloc::vec![d_hidden, d_hidden]));
    }
    for gate in GATES {
        out.push((lstm_name(prefix, "b", gate), alloc::vec![d_hidden]));
    }
}

/// Every tensor the configuration needs, in initialization order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.d_hidden;
    let mut out = Vec::new();
    lstm_shapes(&mut out, SENTENCE_LSTM, cfg.d_word, h);
    if cfg.variant.uses_film() {
        let d_cond = cfg.candidate_encoder.d_cond;
        if cfg.candidate_encoder.kind == EncoderKind::ContextualRecurrent {
            lstm_shapes(&mut out, CANDIDATE_LSTM, cfg.d_word, d_cond);
        }
        out.push((FILM_W_GAMMA.to_string(), alloc::vec![d_cond, h]));
        out.push((FILM_B_GAMMA.to_string(), alloc::vec![h]));
        out.push((FILM_W_BETA.to_string(), alloc::vec![d_cond, h]));
        out.push((FILM_B_BETA.to_string(), alloc::vec![h]));
    }
    if cfg.variant.uses_attention() {
        let a = cfg.attention_width();
        out.push((ATTN_W.to_string(), alloc::vec![h, a]));
        out.push((ATTN_B.to_string(), alloc::vec![a]));
        out.push((ATTN_U.to_string(), alloc::vec![a]));
    }
    out.push((OUT_W.to_string(), alloc::vec![h]));
    out.push((OUT_B.to_string(), alloc::vec![1]));
    out
}

fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|s| s.starts_with("b_") || s == "b")
}

/// Glorot-uniform bound for a weight of the given shape; vectors count
/// as `d×1`.
pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [a, b] => (*a, *b),
        [a] => (*a, 1),
        _ => (1, 1),
    };
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Weights uniform in `[-s, s)` with the Glorot bound `s`, biases zero
/// except forget-gate biases at 1. Deterministic in `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, shape) in param_shapes(cfg) {
        let value = if is_bias(&name) {
            let fill = if name.ends_with(".b_forget") { 1.0 } else { 0.0 };
            Tensor::full(&shape, fill)
        } else {
            let s = glorot_bound(&shape);
            let mut t = Tensor::zeros(&shape);
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
            t
        };
        params.insert(name, value);
    }
    params
}
