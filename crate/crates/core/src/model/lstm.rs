//! Single-direction LSTM without peepholes.
//!
//! ```text
//! i = σ(x W_xi + h W_hi + b_i)    f = σ(x W_xf + h W_hf + b_f)
//! o = σ(x W_xo + h W_ho + b_o)    g = tanh(x W_xc + h W_hc + b_c)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ```
//!
//! `h` and `c` start at zero. A masked step emits the previous state
//! unchanged, so trailing padding never alters the encoding.

use alloc::vec::Vec;

use super::params::{lstm_name, ModelParams, GATES};
use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Tape handles for one LSTM's weights, indexed in [`GATES`] order.
#[derive(Debug, Clone)]
pub struct LstmNodes {
    w_x: [NodeId; 4],
    w_h: [NodeId; 4],
    b: [NodeId; 4],
    d_hidden: usize,
}

impl LstmNodes {
    pub fn bind(tape: &mut Tape, params: &ModelParams, prefix: &str, track: bool) -> Result<Self> {
        let mut leaf = |kind: &str, gate: &str| -> Result<NodeId> {
            let t = params.require(&lstm_name(prefix, kind, gate))?.clone();
            Ok(if track { tape.param(t) } else { tape.constant(t) })
        };
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            w_x.push(leaf("w_x", gate)?);
        }
        for gate in GATES {
            w_h.push(leaf("w_h", gate)?);
        }
        for gate in GATES {
            b.push(leaf("b", gate)?);
        }
        let d_hidden = tape.value(b[0]).numel();
        let arr = |v: Vec<NodeId>| -> [NodeId; 4] { [v[0], v[1], v[2], v[3]] };
        Ok(LstmNodes {
            w_x: arr(w_x),
            w_h: arr(w_h),
            b: arr(b),
            d_hidden,
        })
    }

    /// Tape node ids in the same order as [`super::params::param_shapes`].
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.w_x.iter().chain(&self.w_h).chain(&self.b).copied()
    }
}

/// Runs the recurrence over `inputs` (`n×d_in`) and returns one `[1×d_hidden]`
/// hidden-state node per position.
pub fn lstm_steps(tape: &mut Tape, inputs: NodeId, w: &LstmNodes, mask: &[bool]) -> Result<Vec<NodeId>> {
    let n = tape.value(inputs).dims2().map_or(0, |(n, _)| n);
    if n == 0 {
        return Err(Error::degenerate("lstm_forward", "empty sequence"));
    }
    if mask.len() != n {
        return Err(Error::Shape {
            op: "lstm_forward",
            left: alloc::vec![n],
            right: alloc::vec![mask.len()],
        });
    }
    // Input projections for every position at once.
    let mut projected = [inputs; 4];
    for (g, slot) in projected.iter_mut().enumerate() {
        let xw = tape.matmul(inputs, w.w_x[g])?;
        *slot = tape.add(xw, w.b[g])?;
    }

    let mut h = tape.constant(Tensor::zeros(&[1, w.d_hidden]));
    let mut c = h;
    let mut out = Vec::with_capacity(n);
    for (t, &live) in mask.iter().enumerate() {
        if live {
            let mut pre = [h; 4];
            for g in 0..4 {
                let x_t = tape.row(projected[g], t)?;
                let hw = tape.matmul(h, w.w_h[g])?;
                pre[g] = tape.add(x_t, hw)?;
            }
            let input = tape.sigmoid(pre[0]);
            let forget = tape.sigmoid(pre[1]);
            let output = tape.sigmoid(pre[2]);
            let cand = tape.tanh(pre[3]);
            let kept = tape.mul(forget, c)?;
            let written = tape.mul(input, cand)?;
            c = tape.add(kept, written)?;
            let squashed = tape.tanh(c);
            h = tape.mul(output, squashed)?;
        }
        out.push(h);
    }
    Ok(out)
}

/// Hidden states (`n×d_hidden`) of the sentence LSTM for an embedded
/// sequence.
pub fn lstm_forward(embedded: &Tensor, params: &ModelParams, mask: &[bool]) -> Result<Tensor> {
    lstm_forward_with(embedded, params, super::params::SENTENCE_LSTM, mask)
}

pub(crate) fn lstm_forward_with(
    embedded: &Tensor,
    params: &ModelParams,
    prefix: &str,
    mask: &[bool],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = LstmNodes::bind(&mut tape, params, prefix, false)?;
    let x = tape.constant(embedded.clone());
    let steps = lstm_steps(&mut tape, x, &w, mask)?;
    let stacked = tape.stack_rows(&steps)?;
    Ok(tape.value(stacked).clone())
}
