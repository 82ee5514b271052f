//! The four architecture variants.
//!
//! | variant       | candidate used | reduction                      |
//! |---------------|----------------|--------------------------------|
//! | `simple`      | no             | last unmasked hidden state     |
//! | `simple-attn` | no             | attention over hidden states   |
//! | `film`        | yes            | last unmasked modulated state  |
//! | `film-attn`   | yes            | attention over modulated states|
//!
//! For FiLM variants the candidate is encoded into `c`, the generator
//! produces `γ = c W_γ + b_γ` and `β = c W_β + b_β`, and every hidden state
//! becomes `γ ⊙ h_i + β`. Attention scores are `u · tanh(W f_i + b)`,
//! normalised by a masked softmax into weights `α`, and `r = Σ α_i f_i`.
//! The head is `σ(w_o · r + b_o)`.

pub mod lstm;
pub mod params;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::embeddings::{encode_candidate_on_tape, CandidateEncoderConfig, EmbeddingTable, EncoderKind};
use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

pub use lstm::{lstm_forward, lstm_steps, LstmNodes};
pub use params::{init_params, param_shapes, ModelParams, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Simple,
    SimpleAttn,
    Film,
    FilmAttn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Simple, Variant::SimpleAttn, Variant::Film, Variant::FilmAttn];

    pub fn uses_film(self) -> bool {
        matches!(self, Variant::Film | Variant::FilmAttn)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::SimpleAttn | Variant::FilmAttn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Simple => "simple",
            Variant::SimpleAttn => "simple-attn",
            Variant::Film => "film",
            Variant::FilmAttn => "film-attn",
        }
    }
}

/// Sequence-to-vector reduction for the variants without attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    LastStep,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_word: usize,
    pub d_hidden: usize,
    /// Attention projection width; `None` means `d_hidden`.
    #[serde(default)]
    pub d_attn: Option<usize>,
    pub max_len: usize,
    #[serde(default)]
    pub pooling: Pooling,
    pub candidate_encoder: CandidateEncoderConfig,
}

impl ModelConfig {
    pub fn attention_width(&self) -> usize {
        self.d_attn.unwrap_or(self.d_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_word == 0 {
            return Err(Error::config("d_word", "must be positive"));
        }
        if self.d_hidden == 0 {
            return Err(Error::config("d_hidden", "must be positive"));
        }
        if self.d_attn == Some(0) {
            return Err(Error::config("d_attn", "must be positive"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be positive"));
        }
        if self.variant.uses_film() {
            self.candidate_encoder.validate(self.d_word)?;
        }
        Ok(())
    }
}

/// Vocabulary ids for one instance, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub ids: Vec<usize>,
    pub candidate: Vec<usize>,
    pub label: Option<u8>,
    pub conditioning: Option<Vec<f64>>,
}

impl EncodedInstance {
    pub fn encode(inst: &Instance, vocab: &Vocabulary) -> Self {
        EncodedInstance {
            ids: vocab.ids(&inst.sentence),
            candidate: inst.candidate.clone(),
            label: inst.label,
            conditioning: inst.conditioning.clone(),
        }
    }

    pub fn input(&self) -> SequenceInput<'_> {
        SequenceInput {
            ids: &self.ids,
            mask: None,
            candidate: &self.candidate,
            conditioning: self.conditioning.as_deref(),
        }
    }
}

/// One (possibly padded) row of model input.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a> {
    pub ids: &'a [usize],
    /// `None` means every position is real.
    pub mask: Option<&'a [bool]>,
    /// Token positions of the candidate within `ids`.
    pub candidate: &'a [usize],
    pub conditioning: Option<&'a [f64]>,
}

/// Per-instance intermediate values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `n×d_hidden` LSTM states.
    pub hidden: Tensor,
    pub conditioning: Option<Tensor>,
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
    /// Modulated states `γ ⊙ h_i + β` (FiLM variants).
    pub features: Option<Tensor>,
    pub alpha: Option<Tensor>,
    /// The vector fed to the prediction head.
    pub representation: Tensor,
    pub probability: f64,
}

/// Tape handles for a full parameter set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    cfg: ModelConfig,
    table: NodeId,
    lstm: LstmNodes,
    cand: Option<LstmNodes>,
    film: Option<[NodeId; 4]>,
    attn: Option<[NodeId; 3]>,
    out: [NodeId; 2],
    /// `(name, node)` for every model parameter, in storage order.
    named: Vec<(alloc::string::String, NodeId)>,
}

impl BoundParams {
    /// Places `params` and `table` on `tape`. With `track`, model parameters
    /// become differentiable leaves; the table follows its own flag.
    pub fn bind(
        tape: &mut Tape,
        cfg: &ModelConfig,
        params: &ModelParams,
        table: &EmbeddingTable,
        track: bool,
    ) -> Result<Self> {
        if table.d_word() != cfg.d_word {
            return Err(Error::Shape {
                op: "bind",
                left: vec![cfg.d_word],
                right: vec![table.d_word()],
            });
        }
        params.check_against(cfg)?;
        let table_node = table.bind(tape);
        let lstm = LstmNodes::bind(tape, params, params::SENTENCE_LSTM, track)?;
        let cand = if cfg.variant.uses_film() && cfg.candidate_encoder.kind == EncoderKind::ContextualRecurrent {
            Some(LstmNodes::bind(tape, params, params::CANDIDATE_LSTM, track)?)
        } else {
            None
        };
        let mut leaf = |name: &str| -> Result<NodeId> {
            let t = params.require(name)?.clone();
            Ok(if track { tape.param(t) } else { tape.constant(t) })
        };
        let film = if cfg.variant.uses_film() {
            Some([
                leaf(params::FILM_W_GAMMA)?,
                leaf(params::FILM_B_GAMMA)?,
                leaf(params::FILM_W_BETA)?,
                leaf(params::FILM_B_BETA)?,
            ])
        } else {
            None
        };
        let attn = if cfg.variant.uses_attention() {
            Some([leaf(params::ATTN_W)?, leaf(params::ATTN_B)?, leaf(params::ATTN_U)?])
        } else {
            None
        };
        let out = [leaf(params::OUT_W)?, leaf(params::OUT_B)?];

        let mut ids: Vec<NodeId> = lstm.ids().collect();
        if let Some(c) = &cand {
            ids.extend(c.ids());
        }
        ids.extend(film.iter().flatten());
        ids.extend(attn.iter().flatten());
        ids.extend(out);
        let named = param_shapes(cfg).into_iter().map(|(name, _)| name).zip(ids).collect();
        Ok(BoundParams {
            cfg: *cfg,
            table: table_node,
            lstm,
            cand,
            film,
            attn,
            out,
            named,
        })
    }

    pub fn table(&self) -> NodeId {
        self.table
    }

    pub fn named(&self) -> &[(alloc::string::String, NodeId)] {
        &self.named
    }

    /// Node ids of the modulator tensors (empty without FiLM).
    pub fn modulator(&self) -> Vec<NodeId> {
        self.film.map(|f| f.to_vec()).unwrap_or_default()
    }
}

/// Node ids produced by one instance's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct InstanceNodes {
    pub hidden: NodeId,
    pub conditioning: Option<NodeId>,
    pub gamma: Option<NodeId>,
    pub beta: Option<NodeId>,
    pub features: Option<NodeId>,
    pub alpha: Option<NodeId>,
    pub representation: NodeId,
    /// `[1]`-shaped probability.
    pub probability: NodeId,
}

pub(crate) fn film_generate_nodes(
    tape: &mut Tape,
    cond: NodeId,
    w_gamma: NodeId,
    b_gamma: NodeId,
    w_beta: NodeId,
    b_beta: NodeId,
) -> Result<(NodeId, NodeId)> {
    let d = tape.value(cond).numel();
    let row = tape.reshape(cond, &[1, d])?;
    let affine = |tape: &mut Tape, w: NodeId, b: NodeId| -> Result<NodeId> {
        let z = tape.matmul(row, w)?;
        let z = tape.add(z, b)?;
        let h = tape.value(z).numel();
        tape.reshape(z, &[h])
    };
    let gamma = affine(tape, w_gamma, b_gamma)?;
    let beta = affine(tape, w_beta, b_beta)?;
    Ok((gamma, beta))
}

pub(crate) fn film_apply_nodes(tape: &mut Tape, h: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
    let scaled = tape.mul(h, gamma)?;
    tape.add(scaled, beta)
}

/// Returns `(r, α)`.
pub(crate) fn attend_nodes(
    tape: &mut Tape,
    features: NodeId,
    w: NodeId,
    b: NodeId,
    u: NodeId,
    mask: &[bool],
) -> Result<(NodeId, NodeId)> {
    let (n, d) = tape.value(features).dims2().ok_or_else(|| Error::Shape {
        op: "attend",
        left: tape.value(features).shape().to_vec(),
        right: vec![mask.len()],
    })?;
    if mask.len() != n {
        return Err(Error::Shape {
            op: "attend",
            left: vec![n, d],
            right: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::degenerate("attend", "every position is masked"));
    }
    let proj = tape.matmul(features, w)?;
    let proj = tape.add(proj, b)?;
    let energy = tape.tanh(proj);
    let a = tape.value(u).numel();
    let u_col = tape.reshape(u, &[a, 1])?;
    let scores = tape.matmul(energy, u_col)?;
    let scores = tape.reshape(scores, &[n])?;
    let alpha = tape.masked_softmax(scores, mask)?;
    let alpha_row = tape.reshape(alpha, &[1, n])?;
    let r = tape.matmul(alpha_row, features)?;
    let r = tape.reshape(r, &[d])?;
    Ok((r, alpha))
}

pub(crate) fn predict_head_nodes(tape: &mut Tape, rep: NodeId, w_o: NodeId, b_o: NodeId) -> Result<NodeId> {
    let d = tape.value(rep).numel();
    let row = tape.reshape(rep, &[1, d])?;
    let col = tape.reshape(w_o, &[d, 1])?;
    let z = tape.matmul(row, col)?;
    let z = tape.add(z, b_o)?;
    let p = tape.sigmoid(z);
    tape.reshape(p, &[1])
}

/// Builds the full forward graph for one input row.
pub fn forward_on_tape(tape: &mut Tape, bound: &BoundParams, input: SequenceInput<'_>) -> Result<InstanceNodes> {
    let cfg = &bound.cfg;
    let n = input.ids.len();
    if n == 0 {
        return Err(Error::degenerate("forward", "empty sentence"));
    }
    if n > cfg.max_len {
        return Err(Error::contract(
            "forward",
            alloc::format!("sentence length {n} exceeds max_len {}", cfg.max_len),
        ));
    }
    let all_true;
    let mask = match input.mask {
        Some(m) if m.len() == n => m,
        Some(m) => {
            return Err(Error::Shape {
                op: "forward",
                left: vec![n],
                right: vec![m.len()],
            })
        }
        None => {
            all_true = vec![true; n];
            &all_true
        }
    };
    let last = mask
        .iter()
        .rposition(|&m| m)
        .ok_or_else(|| Error::degenerate("forward", "every position is masked"))?;

    let embedded = tape.gather(bound.table, input.ids)?;
    let steps = lstm_steps(tape, embedded, &bound.lstm, mask)?;
    let hidden = tape.stack_rows(&steps)?;

    let (mut conditioning, mut gamma, mut beta, mut features_opt) = (None, None, None, None);
    let features = if let Some([wg, bg, wb, bb]) = bound.film {
        if input.candidate.is_empty() {
            return Err(Error::degenerate("forward", "empty candidate"));
        }
        let mut cand_ids = Vec::with_capacity(input.candidate.len());
        for &pos in input.candidate {
            if pos >= n || !mask[pos] {
                return Err(Error::Bounds {
                    what: "candidate position",
                    index: pos,
                    len: n,
                });
            }
            cand_ids.push(input.ids[pos]);
        }
        let cond = encode_candidate_on_tape(
            tape,
            bound.table,
            &cfg.candidate_encoder,
            bound.cand.as_ref(),
            &cand_ids,
            input.conditioning,
        )?;
        let (g, b) = film_generate_nodes(tape, cond, wg, bg, wb, bb)?;
        let f = film_apply_nodes(tape, hidden, g, b)?;
        conditioning = Some(cond);
        gamma = Some(g);
        beta = Some(b);
        features_opt = Some(f);
        f
    } else {
        hidden
    };

    let (representation, alpha) = match bound.attn {
        Some([w, b, u]) => {
            let (r, a) = attend_nodes(tape, features, w, b, u, mask)?;
            (r, Some(a))
        }
        None => match cfg.pooling {
            Pooling::LastStep => (tape.row(features, last)?, None),
            Pooling::Mean => (tape.mean_pool(features, mask)?, None),
        },
    };
    let probability = predict_head_nodes(tape, representation, bound.out[0], bound.out[1])?;
    Ok(InstanceNodes {
        hidden,
        conditioning,
        gamma,
        beta,
        features: features_opt,
        alpha,
        representation,
        probability,
    })
}

/// Evaluates the model on one input and returns every intermediate value.
pub fn forward_input(
    input: SequenceInput<'_>,
    table: &EmbeddingTable,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, cfg, params, table, false)?;
    let nodes = forward_on_tape(&mut tape, &bound, input)?;
    let val = |id: Option<NodeId>| id.map(|i| tape.value(i).clone());
    Ok(ForwardTrace {
        hidden: tape.value(nodes.hidden).clone(),
        conditioning: val(nodes.conditioning),
        gamma: val(nodes.gamma),
        beta: val(nodes.beta),
        features: val(nodes.features),
        alpha: val(nodes.alpha),
        representation: tape.value(nodes.representation).clone(),
        probability: tape.value(nodes.probability).data()[0],
    })
}

/// Forward pass for an encoded instance.
pub fn forward(
    instance: &EncodedInstance,
    table: &EmbeddingTable,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ForwardTrace> {
    forward_input(instance.input(), table, params, cfg)
}

/// `(γ, β)` from a conditioning vector.
pub fn film_generate(cond: &Tensor, params: &ModelParams) -> Result<(Tensor, Tensor)> {
    if !cond.is_finite() {
        return Err(Error::NonFinite {
            what: "conditioning vector".into(),
        });
    }
    let mut tape = Tape::new();
    let c = tape.constant(cond.clone());
    let mut leaf = |name: &str| -> Result<NodeId> { Ok(tape.constant(params.require(name)?.clone())) };
    let (wg, bg, wb, bb) = (
        leaf(params::FILM_W_GAMMA)?,
        leaf(params::FILM_B_GAMMA)?,
        leaf(params::FILM_W_BETA)?,
        leaf(params::FILM_B_BETA)?,
    );
    let (g, b) = film_generate_nodes(&mut tape, c, wg, bg, wb, bb)?;
    Ok((tape.value(g).clone(), tape.value(b).clone()))
}

/// `γ ⊙ h_i + β` for every row `h_i`.
pub fn film_apply(hidden: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (h, g, b) = (
        tape.constant(hidden.clone()),
        tape.constant(gamma.clone()),
        tape.constant(beta.clone()),
    );
    if gamma.rank() != 1 || beta.rank() != 1 {
        return Err(Error::Shape {
            op: "film_apply",
            left: gamma.shape().to_vec(),
            right: beta.shape().to_vec(),
        });
    }
    let out = film_apply_nodes(&mut tape, h, g, b)?;
    Ok(tape.value(out).clone())
}

/// Attention pooling; returns `(r, α)`.
pub fn attend(features: &Tensor, params: &ModelParams, mask: &[bool]) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let w = tape.constant(params.require(params::ATTN_W)?.clone());
    let b = tape.constant(params.require(params::ATTN_B)?.clone());
    let u = tape.constant(params.require(params::ATTN_U)?.clone());
    let (r, a) = attend_nodes(&mut tape, f, w, b, u, mask)?;
    Ok((tape.value(r).clone(), tape.value(a).clone()))
}

/// `σ(w_o · rep + b_o)`.
pub fn predict_head(rep: &Tensor, params: &ModelParams) -> Result<f64> {
    if !rep.is_finite() {
        return Err(Error::NonFinite {
            what: "representation".into(),
        });
    }
    let mut tape = Tape::new();
    let r = tape.constant(rep.clone());
    let w = tape.constant(params.require(params::OUT_W)?.clone());
    let b = tape.constant(params.require(params::OUT_B)?.clone());
    let p = predict_head_nodes(&mut tape, r, w, b)?;
    Ok(tape.value(p).data()[0])
}

/// Thresholded decision.
pub fn classify(probability: f64) -> u8 {
    u8::from(probability >= 0.5)
}
