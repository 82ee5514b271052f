//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. Node ids are insertion indices, so inputs always precede the
//! node that consumes them and a single reverse sweep visits each node once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `ln`.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwiseOp {
    Add,
    Sub,
    Hadamard,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    /// The right operand is a vector repeated over the rows of the left.
    Right,
    /// The left operand is a vector repeated over the rows of the right.
    Left,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Binary(EwiseOp, NodeId, NodeId, Broadcast),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Reshape(NodeId),
    Row(NodeId, usize),
    Stack(Vec<NodeId>),
    Gather(NodeId, Vec<usize>),
    MaskedSoftmax(NodeId, Vec<bool>),
    MeanPool(NodeId, Vec<bool>),
    Bce(NodeId, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> NodeId {
        self.nodes.push(Node { op, value, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n) = match (va.dims2(), vb.dims2()) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    left: va.shape().to_vec(),
                    right: vb.shape().to_vec(),
                })
            }
        };
        let out = Tensor::new(vec![m, n], gemm(va.data(), vb.data(), m, k, n))?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(Op::MatMul(a, b), out, tracked))
    }

    /// Unary or binary element-wise operation.
    ///
    /// Binary kinds accept identical shapes, or a length-`d` vector on either
    /// side combined with every row of an `n×d` matrix.
    pub fn ewise(&mut self, kind: EwiseOp, a: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        match (kind, b) {
            (EwiseOp::Tanh, None) => Ok(self.unary(a, Op::Tanh(a), libm::tanh)),
            (EwiseOp::Sigmoid, None) => Ok(self.unary(a, Op::Sigmoid(a), sigmoid)),
            (EwiseOp::Add | EwiseOp::Sub | EwiseOp::Hadamard, Some(b)) => self.binary(kind, a, b),
            _ => Err(Error::contract(
                "ewise",
                format!("{kind:?} called with wrong operand count"),
            )),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(EwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(EwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(EwiseOp::Hadamard, a, b)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let tracked = self.is_tracked(a);
        self.push(op, out, tracked)
    }

    fn binary(&mut self, kind: EwiseOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bcast = if sa == sb {
            Broadcast::None
        } else if sb.len() == 1 && sa.len() == 2 && sa[1] == sb[0] {
            Broadcast::Right
        } else if sa.len() == 1 && sb.len() == 2 && sb[1] == sa[0] {
            Broadcast::Left
        } else {
            return Err(Error::Shape {
                op: "ewise",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        };
        let f = match kind {
            EwiseOp::Add => |x: f64, y: f64| x + y,
            EwiseOp::Sub => |x: f64, y: f64| x - y,
            EwiseOp::Hadamard => |x: f64, y: f64| x * y,
            _ => unreachable!("unary kinds handled by caller"),
        };
        let (va, vb) = (self.value(a), self.value(b));
        let out = match bcast {
            Broadcast::None => {
                let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y));
                Tensor::new(va.shape().to_vec(), data.collect())?
            }
            Broadcast::Right => {
                let d = vb.numel();
                let data = va.data().iter().enumerate().map(|(i, &x)| f(x, vb.data()[i % d]));
                Tensor::new(va.shape().to_vec(), data.collect())?
            }
            Broadcast::Left => {
                let d = va.numel();
                let data = vb.data().iter().enumerate().map(|(i, &y)| f(va.data()[i % d], y));
                Tensor::new(vb.shape().to_vec(), data.collect())?
            }
        };
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(Op::Binary(kind, a, b, bcast), out, tracked))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let tracked = self.is_tracked(a);
        self.push(Op::Scale(a, factor), out, tracked)
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        let tracked = self.is_tracked(a);
        self.push(Op::Sum(a), Tensor::scalar(total), tracked)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(a).clone().reshaped(shape)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(Op::Reshape(a), out, tracked))
    }

    /// Row `i` of an `n×d` matrix as a length-`d` vector.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (n, _) = va.dims2().ok_or_else(|| Error::Shape {
            op: "row",
            left: va.shape().to_vec(),
            right: vec![i],
        })?;
        if i >= n {
            return Err(Error::Bounds {
                what: "row",
                index: i,
                len: n,
            });
        }
        let out = Tensor::vector(va.row(i).to_vec());
        let tracked = self.is_tracked(a);
        Ok(self.push(Op::Row(a, i), out, tracked))
    }

    /// Stacks vectors (`[d]` or `[1×d]`) into an `n×d` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = rows.first().ok_or_else(|| Error::degenerate("stack_rows", "no rows"))?;
        let d = self.value(*first).numel();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let v = self.value(r);
            if v.numel() != d || v.shape().last() != Some(&d) {
                return Err(Error::Shape {
                    op: "stack_rows",
                    left: vec![d],
                    right: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
        }
        let tracked = rows.iter().any(|&r| self.is_tracked(r));
        let out = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(Op::Stack(rows.to_vec()), out, tracked))
    }

    /// Gathers rows of a `V×d` table.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (v, d) = vt.dims2().ok_or_else(|| Error::Shape {
            op: "gather",
            left: vt.shape().to_vec(),
            right: vec![ids.len()],
        })?;
        if ids.is_empty() {
            return Err(Error::degenerate("gather", "no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Bounds {
                    what: "embedding table",
                    index: id,
                    len: v,
                });
            }
            data.extend_from_slice(vt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let tracked = self.is_tracked(table);
        Ok(self.push(Op::Gather(table, ids.to_vec()), out, tracked))
    }

    /// Softmax over the positions where `mask` is true; masked positions get 0.
    pub fn masked_softmax(&mut self, scores: NodeId, mask: &[bool]) -> Result<NodeId> {
        let vs = self.value(scores);
        if vs.rank() != 1 || vs.numel() != mask.len() {
            return Err(Error::Shape {
                op: "masked_softmax",
                left: vs.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let out = Tensor::vector(softmax_masked(vs.data(), mask)?);
        let tracked = self.is_tracked(scores);
        Ok(self.push(Op::MaskedSoftmax(scores, mask.to_vec()), out, tracked))
    }

    /// Mean of the rows of an `n×d` matrix where `mask` is true.
    pub fn mean_pool(&mut self, seq: NodeId, mask: &[bool]) -> Result<NodeId> {
        let vs = self.value(seq);
        let (n, d) = match vs.dims2() {
            Some((n, d)) if n == mask.len() => (n, d),
            _ => {
                return Err(Error::Shape {
                    op: "mean_pool",
                    left: vs.shape().to_vec(),
                    right: vec![mask.len()],
                })
            }
        };
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::degenerate("mean_pool", "every position is masked"));
        }
        let mut acc = vec![0.0; d];
        for i in (0..n).filter(|&i| mask[i]) {
            for (a, x) in acc.iter_mut().zip(vs.row(i)) {
                *a += x;
            }
        }
        let inv = count as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
        let tracked = self.is_tracked(seq);
        Ok(self.push(Op::MeanPool(seq, mask.to_vec()), Tensor::vector(acc), tracked))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    pub fn bce(&mut self, probs: NodeId, targets: &[f64]) -> Result<NodeId> {
        let vp = self.value(probs);
        if targets.is_empty() {
            return Err(Error::degenerate("bce", "empty batch"));
        }
        if vp.numel() != targets.len() {
            return Err(Error::Shape {
                op: "bce",
                left: vp.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let loss = bce_value(vp.data(), targets);
        let tracked = self.is_tracked(probs);
        Ok(self.push(Op::Bce(probs, targets.to_vec()), Tensor::scalar(loss), tracked))
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |id: NodeId, contrib: Tensor| {
            if !self.nodes[id.0].tracked {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let shaped = |like: &Tensor, data: Vec<f64>| Tensor::new(like.shape().to_vec(), data).expect("gradient shape");

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2().expect("matrix");
                let (_, n) = vb.dims2().expect("matrix");
                if self.is_tracked(*a) {
                    send(*a, shaped(va, gemm_nt(g.data(), vb.data(), m, n, k)));
                }
                if self.is_tracked(*b) {
                    send(*b, shaped(vb, gemm_tn(va.data(), g.data(), m, k, n)));
                }
            }
            Op::Binary(kind, a, b, bcast) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                // Full-shape partials, then fold broadcast operands over rows.
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    EwiseOp::Add => (g.data().to_vec(), g.data().to_vec()),
                    EwiseOp::Sub => (g.data().to_vec(), g.data().iter().map(|x| -x).collect()),
                    EwiseOp::Hadamard => {
                        let other = |v: &Tensor, i: usize| v.data()[i % v.numel()];
                        let ga = g.data().iter().enumerate().map(|(i, gi)| gi * other(vb, i)).collect();
                        let gb = g.data().iter().enumerate().map(|(i, gi)| gi * other(va, i)).collect();
                        (ga, gb)
                    }
                    _ => unreachable!(),
                };
                let fold = |full: Vec<f64>, d: usize| {
                    let mut out = vec![0.0; d];
                    for (i, x) in full.into_iter().enumerate() {
                        out[i % d] += x;
                    }
                    out
                };
                match bcast {
                    Broadcast::None => {
                        send(*a, shaped(va, ga));
                        send(*b, shaped(vb, gb));
                    }
                    Broadcast::Right => {
                        send(*a, shaped(va, ga));
                        send(*b, shaped(vb, fold(gb, vb.numel())));
                    }
                    Broadcast::Left => {
                        send(*a, shaped(va, fold(ga, va.numel())));
                        send(*b, shaped(vb, gb));
                    }
                }
            }
            Op::Tanh(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                send(*a, shaped(&node.value, data));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                send(*a, shaped(&node.value, data));
            }
            Op::Scale(a, f) => {
                send(*a, shaped(g, g.data().iter().map(|x| x * f).collect()));
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                send(*a, Tensor::full(va.shape(), g.data()[0]));
            }
            Op::Reshape(a) => {
                send(*a, shaped(self.value(*a), g.data().to_vec()));
            }
            Op::Row(a, i) => {
                let va = self.value(*a);
                let d = g.numel();
                let mut data = vec![0.0; va.numel()];
                data[i * d..(i + 1) * d].copy_from_slice(g.data());
                send(*a, shaped(va, data));
            }
            Op::Stack(rows) => {
                for (i, r) in rows.iter().enumerate() {
                    send(*r, shaped(self.value(*r), g.row(i).to_vec()));
                }
            }
            Op::Gather(table, ids) => {
                let vt = self.value(*table);
                let d = vt.dims2().expect("matrix").1;
                let mut data = vec![0.0; vt.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    for (acc, x) in data[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                send(*table, shaped(vt, data));
            }
            Op::MaskedSoftmax(a, mask) => {
                let y = node.value.data();
                let dot: f64 = y
                    .iter()
                    .zip(g.data())
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|((yi, gi), _)| yi * gi)
                    .sum();
                let data = y
                    .iter()
                    .zip(g.data())
                    .zip(mask)
                    .map(|((yi, gi), &m)| if m { yi * (gi - dot) } else { 0.0 })
                    .collect();
                send(*a, shaped(&node.value, data));
            }
            Op::MeanPool(a, mask) => {
                let va = self.value(*a);
                let d = g.numel();
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let mut data = vec![0.0; va.numel()];
                for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for (o, gi) in data[i * d..(i + 1) * d].iter_mut().zip(g.data()) {
                        *o = gi / count;
                    }
                }
                send(*a, shaped(va, data));
            }
            Op::Bce(p, targets) => {
                let vp = self.value(*p);
                let m = targets.len() as f64;
                let g0 = g.data()[0];
                // Gradient evaluated at the clamped probability so saturated
                // wrong predictions still receive a finite push.
                let data = vp
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&pi, &y)| {
                        let pc = clamp_prob(pi);
                        g0 * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / m
                    })
                    .collect();
                send(*p, shaped(vp, data));
            }
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub(crate) fn bce_value(probs: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let pc = clamp_prob(p);
            y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc)
        })
        .sum();
    -total / targets.len() as f64
}

pub(crate) fn softmax_masked(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::degenerate("masked_softmax", "every position is masked"));
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { libm::exp(s - max) } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let c = t.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let out = t.matmul(i, c).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 4.0]);

        let r = t.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let out = t.matmul(r, c).unwrap();
        assert_eq!(t.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn ewise_basics() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.ewise(EwiseOp::Sigmoid, z, None).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);

        let ones = t.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let v = t.constant(Tensor::vector(vec![5.0, 6.0, 7.0]));
        let h = t.ewise(EwiseOp::Hadamard, ones, Some(v)).unwrap();
        assert_eq!(t.value(h).data(), &[5.0, 6.0, 7.0]);

        assert!(t.ewise(EwiseOp::Tanh, z, Some(v)).is_err());
        assert!(t.ewise(EwiseOp::Add, z, None).is_err());
        let m = t.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.add(m, v), Err(Error::Shape { .. })));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(close(sigmoid(1.0), 0.731_058_578_630_004_9, 1e-15));
    }

    #[test]
    fn masked_softmax_examples() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.masked_softmax(s, &[true, true]).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let s = t.constant(Tensor::vector(vec![-3.7, 1e3]));
        let y = t.masked_softmax(s, &[true, false]).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 0.0]);

        // exp(k)/Σexp evaluated independently.
        let s = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = t.masked_softmax(s, &[true; 3]).unwrap();
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_64,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in t.value(y).data().iter().zip(expected) {
            assert!(close(*a, b, 1e-12));
        }

        assert!(matches!(
            t.masked_softmax(s, &[false; 3]),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn mean_pool_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap());
        let p = t.mean_pool(a, &[true]).unwrap();
        assert_eq!(t.value(p).data(), &[2.0, 4.0]);

        let rows = [vec![1.0, 1.0], vec![3.0, 3.0], vec![99.0, 99.0]];
        let a = t.constant(Tensor::from_rows(&rows).unwrap());
        let p = t.mean_pool(a, &[true, true, false]).unwrap();
        assert_eq!(t.value(p).data(), &[2.0, 2.0]);
        assert!(matches!(t.mean_pool(a, &[false; 3]), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn backward_identity_and_square() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.5));
        let g = t.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = t.param(Tensor::vector(vec![0.5, 0.5]));
        let y = t.mul(c, x).unwrap();
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn bce_values() {
        assert!(close(bce_value(&[0.5], &[1.0]), core::f64::consts::LN_2, 1e-15));
        assert!(close(
            bce_value(&[0.5, 0.5], &[0.0, 1.0]),
            core::f64::consts::LN_2,
            1e-15
        ));
        assert!(close(bce_value(&[0.9, 0.2], &[1.0, 0.0]), 0.164_252_033_486_018, 1e-12));
        // Saturated predictions stay finite.
        assert!(bce_value(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }
}
