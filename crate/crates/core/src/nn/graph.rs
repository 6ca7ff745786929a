//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass together with the
//! values it needs for the backward pass. Parameters enter the tape through
//! [`Graph::param`]; using the same parameter twice (shared branches) simply
//! accumulates both contributions into its gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::conv::{self, ConvDims, ConvGeometry};
use super::loss::{self, PoseLossWeights, PROB_EPS};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<S> {
    Input,
    Param(ParamId),
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: ConvDims,
        relu: bool,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<S>,
    },
    Reshape(NodeId),
    L2Normalize {
        x: NodeId,
        norms: Vec<S>,
    },
    Concat(Vec<NodeId>),
    Softmax(NodeId),
    SoftmaxBce {
        logits: NodeId,
        probs: Vec<S>,
        targets: Vec<usize>,
    },
    Bce {
        probs: NodeId,
        targets: Vec<usize>,
    },
    PoseLoss {
        pred: NodeId,
        targets: Vec<[f64; 3]>,
        weights: PoseLossWeights,
        k: f64,
    },
    WeightedSum {
        x: NodeId,
        coeffs: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Graph<'p, S: Scalar = f32> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    training: bool,
    rng: SeededRng,
}

impl<'p, S: Scalar> Graph<'p, S> {
    /// `training` enables dropout; `seed` fixes the dropout masks.
    pub fn new(params: &'p ParamStore<S>, training: bool, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            training,
            rng: seeded(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &ParamStore<S> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::InvalidValue(format!(
                "non-finite values produced by node {}",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// 3D convolution with optional fused ReLU.
    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeometry,
        relu: bool,
    ) -> Result<NodeId> {
        let dims = ConvDims::resolve(
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
            geom,
        )?;
        let y = conv::forward(self.value(x), self.value(w), self.value(b), &dims, relu);
        self.push(y, Op::Conv { x, w, b, dims, relu })
    }

    /// `y = x W^T + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = dense_values(self.value(x), self.value(w), self.value(b))?;
        self.push(y, Op::Dense { x, w, b })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        self.push(y, Op::Relu(x))
    }

    /// Inverted dropout: identity at inference, and during training units are
    /// zeroed with probability `rate` and the rest scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} not in [0,1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = S::from_f64(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<S> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut y = self.value(x).clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(y, Op::Dropout { x, mask })
    }

    /// Reshape to `[N, rest]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let shape = [v.rows(), v.row_len()];
        let y = v.clone().reshape(&shape)?;
        self.push(y, Op::Reshape(x))
    }

    /// Row-wise `x / sqrt(|x|^2 + eps)`. With `eps = 0` a zero row is an error.
    pub fn l2_normalize(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(Error::Shape(format!("l2_normalize expects [N, D], got {:?}", v.shape())));
        }
        let d = v.row_len();
        let mut y = v.clone();
        let mut norms = Vec::with_capacity(v.rows());
        for row in y.data_mut().chunks_mut(d) {
            let mut ss = S::from_f64(eps);
            for &r in row.iter() {
                ss += r * r;
            }
            let norm = ss.sqrt();
            if norm <= S::zero() {
                return Err(Error::ZeroNorm);
            }
            for r in row.iter_mut() {
                *r = *r / norm;
            }
            norms.push(norm);
        }
        self.push(y, Op::L2Normalize { x, norms })
    }

    /// Concatenation of `[N, d_i]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.rows() != n {
                return Err(Error::Shape(format!("concat part {:?} vs batch {n}", v.shape())));
            }
            total += v.row_len();
        }
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                let v = self.value(p);
                let d = v.row_len();
                data.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
        }
        let y = Tensor::new(&[n, total], data)?;
        self.push(y, Op::Concat(parts.to_vec()))
    }

    /// Row-wise softmax of a `[N, K]` tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(Error::Shape(format!("softmax expects [N, K], got {:?}", v.shape())));
        }
        let mut y = v.clone();
        let k = v.row_len();
        for row in y.data_mut().chunks_mut(k) {
            softmax_in_place(row);
        }
        self.push(y, Op::Softmax(x))
    }

    /// Mean binary cross entropy of two-class `logits: [N, 2]` through a
    /// softmax; `targets[n]` is 1 for LAEO.
    pub fn softmax_bce(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        if v.shape() != [targets.len(), 2] {
            return Err(Error::Shape(format!(
                "softmax_bce expects [{}, 2], got {:?}",
                targets.len(),
                v.shape()
            )));
        }
        let mut probs = v.data().to_vec();
        let mut total = 0.0;
        for (row, &c) in probs.chunks_mut(2).zip(targets) {
            softmax_in_place(row);
            total += loss::laeo_loss(loss::LossSample {
                class: c as u8,
                p_laeo: row[1].as_f64(),
            });
        }
        let mean = total / targets.len() as f64;
        self.push(
            Tensor::scalar(S::from_f64(mean)),
            Op::SoftmaxBce {
                logits,
                probs,
                targets: targets.to_vec(),
            },
        )
    }

    /// Mean binary cross entropy of LAEO probabilities `[N]` or `[N, 1]`.
    pub fn bce(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = self.value(probs);
        if v.len() != targets.len() {
            return Err(Error::Shape(format!("bce: {} probs, {} targets", v.len(), targets.len())));
        }
        let total: f64 = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &c)| {
                loss::laeo_loss(loss::LossSample {
                    class: c as u8,
                    p_laeo: p.as_f64(),
                })
            })
            .sum();
        let mean = total / targets.len() as f64;
        self.push(
            Tensor::scalar(S::from_f64(mean)),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
        )
    }

    /// Mean weighted head-pose loss of `pred: [N, 3]` normalized angles.
    pub fn pose_loss(
        &mut self,
        pred: NodeId,
        targets: &[[f64; 3]],
        weights: PoseLossWeights,
        k: f64,
    ) -> Result<NodeId> {
        let v = self.value(pred);
        if v.shape() != [targets.len(), 3] {
            return Err(Error::Shape(format!(
                "pose_loss expects [{}, 3], got {:?}",
                targets.len(),
                v.shape()
            )));
        }
        let total: f64 = v
            .data()
            .chunks(3)
            .zip(targets)
            .map(|(row, t)| {
                let p = [row[0].as_f64(), row[1].as_f64(), row[2].as_f64()];
                loss::pose_loss_normalized(p, *t, &weights, k)
            })
            .sum();
        let mean = total / targets.len() as f64;
        self.push(
            Tensor::scalar(S::from_f64(mean)),
            Op::PoseLoss {
                pred,
                targets: targets.to_vec(),
                weights,
                k,
            },
        )
    }

    /// `sum_i x_i * coeffs_i`, a scalar probe used to check gradients of
    /// non-scalar operations.
    pub fn weighted_sum(&mut self, x: NodeId, coeffs: &[S]) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != coeffs.len() {
            return Err(Error::Shape(format!("weighted_sum: {} values, {} coeffs", v.len(), coeffs.len())));
        }
        let mut s = S::zero();
        for (&a, &c) in v.data().iter().zip(coeffs) {
            s += a * c;
        }
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                coeffs: coeffs.to_vec(),
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::Conv { x, w, b, dims, relu } => {
                    let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                    let (dx, dw, db) =
                        conv::backward(self.value(*x), self.value(*w), &node.value, &g, dims, *relu, need_dx);
                    if let Some(dx) = dx {
                        add_grad(&mut grads, *x, dx);
                    }
                    add_grad(&mut grads, *w, dw);
                    add_grad(&mut grads, *b, db);
                }
                Op::Dense { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, din) = (xv.rows(), xv.row_len());
                    let dout = wv.rows();
                    let mut dx = vec![S::zero(); n * din];
                    gemm(MatRef::new(g.data(), n, dout), MatRef::new(wv.data(), dout, din), &mut dx, false);
                    let mut dw = vec![S::zero(); dout * din];
                    gemm(
                        MatRef::transposed(g.data(), dout, n),
                        MatRef::new(xv.data(), n, din),
                        &mut dw,
                        false,
                    );
                    let mut db = vec![S::zero(); dout];
                    for row in g.data().chunks(dout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    add_grad(&mut grads, *x, Tensor::new(xv.shape(), dx)?);
                    add_grad(&mut grads, *w, Tensor::new(wv.shape(), dw)?);
                    add_grad(&mut grads, *b, Tensor::new(self.value(*b).shape(), db)?);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= S::zero() {
                            *d = S::zero();
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::Reshape(x) => {
                    let dx = g.reshape(self.value(*x).shape())?;
                    add_grad(&mut grads, *x, dx);
                }
                Op::L2Normalize { x, norms } => {
                    let d = node.value.row_len();
                    let mut dx = g;
                    for ((gr, yr), &norm) in dx
                        .data_mut()
                        .chunks_mut(d)
                        .zip(node.value.data().chunks(d))
                        .zip(norms)
                    {
                        let mut dot = S::zero();
                        for (&gv, &yv) in gr.iter().zip(yr) {
                            dot += gv * yv;
                        }
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = (*gv - yv * dot) / norm;
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::Concat(parts) => {
                    let n = node.value.rows();
                    let total = node.value.row_len();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let d = pv.row_len();
                        let mut dp = Vec::with_capacity(n * d);
                        for r in 0..n {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + d]);
                        }
                        add_grad(&mut grads, p, Tensor::new(pv.shape(), dp)?);
                        offset += d;
                    }
                }
                Op::Softmax(x) => {
                    let k = node.value.row_len();
                    let mut dx = g;
                    for (gr, yr) in dx.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                        let mut dot = S::zero();
                        for (&gv, &yv) in gr.iter().zip(yr) {
                            dot += gv * yv;
                        }
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::SoftmaxBce { logits, probs, targets } => {
                    let scale = g.data()[0].as_f64() / targets.len() as f64;
                    let mut dx = vec![S::zero(); probs.len()];
                    for ((d, p), &c) in dx.chunks_mut(2).zip(probs.chunks(2)).zip(targets) {
                        let p1 = p[1].as_f64();
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p1) {
                            continue;
                        }
                        let c = c as f64;
                        d[0] = S::from_f64(scale * (p[0].as_f64() - (1.0 - c)));
                        d[1] = S::from_f64(scale * (p1 - c));
                    }
                    add_grad(&mut grads, *logits, Tensor::new(self.value(*logits).shape(), dx)?);
                }
                Op::Bce { probs, targets } => {
                    let pv = self.value(*probs);
                    let scale = g.data()[0].as_f64() / targets.len() as f64;
                    let dx: Vec<S> = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &c)| {
                            S::from_f64(
                                scale
                                    * loss::laeo_loss_grad(loss::LossSample {
                                        class: c as u8,
                                        p_laeo: p.as_f64(),
                                    }),
                            )
                        })
                        .collect();
                    add_grad(&mut grads, *probs, Tensor::new(pv.shape(), dx)?);
                }
                Op::PoseLoss { pred, targets, weights, k } => {
                    let pv = self.value(*pred);
                    let scale = g.data()[0].as_f64() / targets.len() as f64;
                    let mut dx = Vec::with_capacity(pv.len());
                    for (row, t) in pv.data().chunks(3).zip(targets) {
                        let p = [row[0].as_f64(), row[1].as_f64(), row[2].as_f64()];
                        let d = loss::pose_loss_normalized_grad(p, *t, weights, *k);
                        dx.extend(d.iter().map(|&v| S::from_f64(scale * v)));
                    }
                    add_grad(&mut grads, *pred, Tensor::new(pv.shape(), dx)?);
                }
                Op::WeightedSum { x, coeffs } => {
                    let s = g.data()[0];
                    let dx: Vec<S> = coeffs.iter().map(|&c| c * s).collect();
                    add_grad(&mut grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
        }
        if !out.is_finite() {
            return Err(Error::InvalidValue("non-finite gradient".into()));
        }
        Ok(out)
    }
}

fn add_grad<S: Scalar>(grads: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) fn dense_values<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape().len() != 2 || w.shape().len() != 2 || x.row_len() != w.row_len() || b.shape() != [w.rows()] {
        return Err(Error::Shape(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (n, din, dout) = (x.rows(), x.row_len(), w.rows());
    let mut y = vec![S::zero(); n * dout];
    gemm(MatRef::new(x.data(), n, din), MatRef::transposed(w.data(), din, dout), &mut y, false);
    for row in y.chunks_mut(dout) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    Tensor::new(&[n, dout], y)
}

/// Standalone 3D convolution (no tape).
pub fn conv_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    geom: ConvGeometry,
    relu: bool,
) -> Result<Tensor<S>> {
    let dims = ConvDims::resolve(x.shape(), w.shape(), b.shape(), geom)?;
    Ok(conv::forward(x, w, b, &dims, relu))
}

/// Standalone affine map `x W^T + b`.
pub fn dense_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    dense_values(x, w, b)
}

/// Unit-norm copy of `x`; a zero vector is an error.
pub fn l2_normalize<S: Scalar>(x: &[S]) -> Result<alloc::vec::Vec<S>> {
    let mut ss = S::zero();
    for &v in x {
        ss += v * v;
    }
    let norm = ss.sqrt();
    if norm <= S::zero() || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(x.iter().map(|&v| v / norm).collect())
}

/// Numerically stabilized softmax.
pub fn softmax<S: Scalar>(x: &[S]) -> alloc::vec::Vec<S> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}
