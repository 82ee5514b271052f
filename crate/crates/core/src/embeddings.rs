//! Word-vector tables and the candidate-expression encoders.

use alloc::format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::lstm::{lstm_steps, LstmNodes};
use crate::model::params::{ModelParams, CANDIDATE_LSTM};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::{PAD, UNK};

/// A `V×d_word` matrix of word vectors.
///
/// Row 0 (PAD) is zero and row 1 (UNK) is a frozen zero vector; neither is
/// ever updated, even when the table is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn from_matrix(matrix: Tensor, trainable: bool) -> Result<Self> {
        let (v, _) = matrix.dims2().ok_or_else(|| Error::Shape {
            op: "EmbeddingTable",
            left: matrix.shape().to_vec(),
            right: alloc::vec![2],
        })?;
        if v < 2 {
            return Err(Error::contract("EmbeddingTable", "table needs the PAD and UNK rows"));
        }
        let mut table = EmbeddingTable { matrix, trainable };
        table.zero_reserved_rows();
        Ok(table)
    }

    pub fn zeros(vocab_len: usize, d_word: usize) -> Self {
        EmbeddingTable {
            matrix: Tensor::zeros(&[vocab_len.max(2), d_word]),
            trainable: false,
        }
    }

    /// Uniform `[-scale, scale)` rows for every non-reserved id.
    pub fn random(vocab_len: usize, d_word: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Self::zeros(vocab_len, d_word);
        for v in t.matrix.data_mut()[2 * d_word..].iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        t
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn vocab_len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn d_word(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    /// Overwrites a non-reserved row.
    pub fn set_row(&mut self, id: usize, values: &[f64]) -> Result<()> {
        if id >= self.vocab_len() {
            return Err(Error::Bounds {
                what: "embedding table",
                index: id,
                len: self.vocab_len(),
            });
        }
        if values.len() != self.d_word() {
            return Err(Error::Shape {
                op: "set_row",
                left: alloc::vec![self.d_word()],
                right: alloc::vec![values.len()],
            });
        }
        if id == PAD || id == UNK {
            return Ok(());
        }
        let d = self.d_word();
        self.matrix.data_mut()[id * d..(id + 1) * d].copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.matrix.data_mut()
    }

    fn zero_reserved_rows(&mut self) {
        let d = self.d_word();
        self.matrix.data_mut()[..2 * d].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Registers the table on a tape; tracked only when trainable.
    pub fn bind(&self, tape: &mut Tape) -> NodeId {
        if self.trainable {
            tape.param(self.matrix.clone())
        } else {
            tape.constant(self.matrix.clone())
        }
    }
}

/// Row gather of `ids` into an `n×d_word` tensor.
pub fn lookup(table: &EmbeddingTable, ids: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let t = tape.constant(table.matrix.clone());
    let out = tape.gather(t, ids)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Mean of the frozen word vectors of the candidate tokens.
    StaticMean,
    /// Mean of the hidden states of a small trainable LSTM run over the
    /// candidate tokens.
    ContextualRecurrent,
    /// A vector supplied with each instance (e.g. external sentence
    /// embeddings of the expression).
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEncoderConfig {
    pub kind: EncoderKind,
    pub d_cond: usize,
}

impl CandidateEncoderConfig {
    pub fn validate(&self, d_word: usize) -> Result<()> {
        if self.d_cond == 0 {
            return Err(Error::config("d_cond", "must be positive"));
        }
        if self.kind == EncoderKind::StaticMean && self.d_cond != d_word {
            return Err(Error::config(
                "d_cond",
                format!(
                    "static-mean conditioning has width d_word = {d_word}, got {}",
                    self.d_cond
                ),
            ));
        }
        Ok(())
    }
}

/// Conditioning vector for one candidate, built on `tape`.
///
/// `candidate_ids` are vocabulary ids of the candidate tokens.
pub(crate) fn encode_candidate_on_tape(
    tape: &mut Tape,
    table: NodeId,
    cfg: &CandidateEncoderConfig,
    encoder: Option<&LstmNodes>,
    candidate_ids: &[usize],
    precomputed: Option<&[f64]>,
) -> Result<NodeId> {
    if candidate_ids.is_empty() {
        return Err(Error::degenerate("encode_candidate", "empty candidate"));
    }
    match cfg.kind {
        EncoderKind::StaticMean => {
            let rows = tape.gather(table, candidate_ids)?;
            let mask = alloc::vec![true; candidate_ids.len()];
            tape.mean_pool(rows, &mask)
        }
        EncoderKind::ContextualRecurrent => {
            let nodes =
                encoder.ok_or_else(|| Error::contract("encode_candidate", "recurrent encoder weights missing"))?;
            let rows = tape.gather(table, candidate_ids)?;
            let mask = alloc::vec![true; candidate_ids.len()];
            let steps = lstm_steps(tape, rows, nodes, &mask)?;
            let states = tape.stack_rows(&steps)?;
            tape.mean_pool(states, &mask)
        }
        EncoderKind::Precomputed => {
            let v = precomputed
                .ok_or_else(|| Error::contract("encode_candidate", "instance has no precomputed conditioning"))?;
            if v.len() != cfg.d_cond {
                return Err(Error::Shape {
                    op: "encode_candidate",
                    left: alloc::vec![cfg.d_cond],
                    right: alloc::vec![v.len()],
                });
            }
            Ok(tape.constant(Tensor::vector(v.to_vec())))
        }
    }
}

/// Conditioning vector `c_vn` for a candidate expression.
///
/// `encoder` must hold the `cand.*` weights for the contextual-recurrent
/// kind and is ignored otherwise.
pub fn encode_candidate(
    candidate_ids: &[usize],
    table: &EmbeddingTable,
    cfg: &CandidateEncoderConfig,
    encoder: Option<&ModelParams>,
    precomputed: Option<&[f64]>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let t = tape.constant(table.matrix.clone());
    let nodes = match (cfg.kind, encoder) {
        (EncoderKind::ContextualRecurrent, Some(p)) => Some(LstmNodes::bind(&mut tape, p, CANDIDATE_LSTM, false)?),
        _ => None,
    };
    let out = encode_candidate_on_tape(&mut tape, t, cfg, nodes.as_ref(), candidate_ids, precomputed)?;
    Ok(tape.value(out).clone())
}

/// Zeroes the gradient of the PAD and UNK rows.
pub(crate) fn mask_frozen_rows(grad: &mut [f64], d_word: usize) {
    grad[..2 * d_word].iter_mut().for_each(|g| *g = 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{lstm_name, GATES};
    use crate::model::{init_params, ModelConfig, Pooling, Variant};

    fn table() -> EmbeddingTable {
        let m = Tensor::from_rows(&[
            alloc::vec![9.0, 9.0],
            alloc::vec![9.0, 9.0],
            alloc::vec![1.0, 3.0],
            alloc::vec![3.0, 5.0],
            alloc::vec![-2.0, 0.5],
        ])
        .unwrap();
        EmbeddingTable::from_matrix(m, false).unwrap()
    }

    const STATIC: CandidateEncoderConfig = CandidateEncoderConfig {
        kind: EncoderKind::StaticMean,
        d_cond: 2,
    };

    #[test]
    fn reserved_rows_are_zeroed() {
        let t = table();
        assert_eq!(t.row(PAD), &[0.0, 0.0]);
        assert_eq!(t.row(UNK), &[0.0, 0.0]);
        let mut t = t;
        t.set_row(PAD, &[4.0, 4.0]).unwrap();
        assert_eq!(t.row(PAD), &[0.0, 0.0]);
    }

    #[test]
    fn lookup_cases() {
        let t = table();
        assert_eq!(lookup(&t, &[0]).unwrap().data(), &[0.0, 0.0]);
        let two = lookup(&t, &[2, 2]).unwrap();
        assert_eq!(two.row(0), two.row(1));
        assert!(matches!(lookup(&t, &[5]), Err(Error::Bounds { .. })));
    }

    #[test]
    fn frozen_lookup_is_not_differentiated() {
        let t = table();
        let mut tape = Tape::new();
        let node = t.bind(&mut tape);
        let rows = tape.gather(node, &[2, 3]).unwrap();
        let loss = tape.sum(rows);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(node).is_none());
    }

    #[test]
    fn trainable_lookup_scatters_gradient() {
        let mut t = table();
        t.trainable = true;
        let mut tape = Tape::new();
        let node = t.bind(&mut tape);
        let rows = tape.gather(node, &[3, 2, 3]).unwrap();
        let loss = tape.sum(rows);
        let g = tape.backward(loss).unwrap();
        let g = g.get(node).unwrap();
        assert_eq!(g.row(3), &[2.0, 2.0]);
        assert_eq!(g.row(2), &[1.0, 1.0]);
        assert_eq!(g.row(4), &[0.0, 0.0]);
    }

    #[test]
    fn static_mean_cases() {
        let t = table();
        let one = encode_candidate(&[4], &t, &STATIC, None, None).unwrap();
        assert_eq!(one.data(), t.row(4));
        let mid = encode_candidate(&[2, 3], &t, &STATIC, None, None).unwrap();
        assert_eq!(mid.data(), &[2.0, 4.0]);
        assert!(matches!(
            encode_candidate(&[], &t, &STATIC, None, None),
            Err(Error::Degenerate { .. })
        ));
    }

    fn recurrent_cfg() -> (ModelConfig, CandidateEncoderConfig) {
        let enc = CandidateEncoderConfig {
            kind: EncoderKind::ContextualRecurrent,
            d_cond: 3,
        };
        let cfg = ModelConfig {
            variant: Variant::Film,
            d_word: 2,
            d_hidden: 2,
            d_attn: None,
            max_len: 8,
            pooling: Pooling::LastStep,
            candidate_encoder: enc,
        };
        (cfg, enc)
    }

    #[test]
    fn recurrent_encoder_with_zero_weights_is_zero() {
        let (cfg, enc) = recurrent_cfg();
        let mut p = init_params(&cfg, 1);
        for gate in GATES {
            for kind in ["w_x", "w_h", "b"] {
                let name = lstm_name(CANDIDATE_LSTM, kind, gate);
                let shape = p.get(&name).unwrap().shape().to_vec();
                p.insert(name, Tensor::zeros(&shape));
            }
        }
        let out = encode_candidate(&[2, 3], &table(), &enc, Some(&p), None).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn permutation_behaviour_of_encoders() {
        let t = table();
        let a = encode_candidate(&[2, 3, 4], &t, &STATIC, None, None).unwrap();
        let b = encode_candidate(&[4, 2, 3], &t, &STATIC, None, None).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let (cfg, enc) = recurrent_cfg();
        let p = init_params(&cfg, 4);
        let a = encode_candidate(&[2, 3, 4], &t, &enc, Some(&p), None).unwrap();
        let b = encode_candidate(&[4, 2, 3], &t, &enc, Some(&p), None).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn precomputed_and_config_checks() {
        let enc = CandidateEncoderConfig {
            kind: EncoderKind::Precomputed,
            d_cond: 3,
        };
        let out = encode_candidate(&[2], &table(), &enc, None, Some(&[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(out.data(), &[0.1, 0.2, 0.3]);
        assert!(encode_candidate(&[2], &table(), &enc, None, Some(&[0.1])).is_err());
        assert!(encode_candidate(&[2], &table(), &enc, None, None).is_err());
        assert!(STATIC.validate(2).is_ok());
        assert!(STATIC.validate(3).is_err());
    }
}
