use rand::Rng;

use super::kernels::{self, View};
use super::{AttentionMask, MaskKind, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Segment structure of a multi-head attention call.
///
/// Query segment `s` (length `q_lens[s]`) attends to key segment `s`
/// (length `k_lens[s]`). `mask` applies per segment and requires square
/// segments; `None` means unrestricted (cross-attention).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub heads: usize,
    pub q_lens: Vec<usize>,
    pub k_lens: Vec<usize>,
    pub mask: Option<MaskKind>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedSoftmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        // d loss / d logits, precomputed in the forward pass
        dlogits: Vec<f64>,
    },
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient after [`Graph::backward`]; `None` if the node received none.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub(crate) fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `x[.., d] + bias[d]`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(bias).numel() != d {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(d) {
            for (o, v) in row.iter_mut().zip(b) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        let (xhat, rstd) = kernels::layer_norm_core(self.value(x).data(), d);
        let out = kernels::affine_rows(&xhat, self.value(gain).data(), self.value(bias).data());
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Rows of `table` (`V × d`) selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        kernels::check_targets(ids, v)?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], out);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn masked_softmax(&mut self, scores: Var, mask: &AttentionMask) -> Result<Var> {
        let out = kernels::masked_softmax(self.value(scores), mask)?;
        Ok(self.push(out, Op::MaskedSoftmax(scores), &[scores]))
    }

    /// Fused multi-head attention: split heads, scaled `QKᵀ`, masked softmax,
    /// weighted sum of values, concatenate heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols();
        let bad = kt.cols() != d
            || vt.shape() != kt.shape()
            || layout.heads == 0
            || d % layout.heads != 0
            || layout.q_lens.len() != layout.k_lens.len()
            || layout.q_lens.iter().sum::<usize>() != qt.rows()
            || layout.k_lens.iter().sum::<usize>() != kt.rows();
        if bad {
            return Err(self.mismatch("attention", q, k));
        }
        if layout.mask.is_some() && layout.q_lens != layout.k_lens {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: layout.q_lens.clone(),
                rhs: layout.k_lens.clone(),
            });
        }
        let (out, probs) = kernels::attention_forward(
            qt.data(),
            kt.data(),
            vt.data(),
            d,
            layout.heads,
            &layout.q_lens,
            &layout.k_lens,
            layout.mask,
        );
        let out = Tensor::from_parts(qt.shape().to_vec(), out);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Summed token cross-entropy with optional label smoothing.
    ///
    /// `weights[t]` multiplies position `t` (0 excludes it). With smoothing
    /// `eps`, the target distribution is `(1 - eps)·onehot + eps/V`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        smoothing: f64,
    ) -> Result<Var> {
        let lt = self.value(logits);
        let v = lt.cols();
        if lt.rows() != targets.len() || weights.len() != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: lt.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        kernels::check_targets(targets, v)?;
        let mut dlogits = vec![0.0; lt.numel()];
        let mut lp = vec![0.0; v];
        let mut total = 0.0;
        let uniform = smoothing / v as f64;
        for (t, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            kernels::log_softmax_row(lt.row(t), &mut lp);
            let mut row_loss = -(1.0 - smoothing) * lp[y];
            if smoothing > 0.0 {
                row_loss -= uniform * lp.iter().sum::<f64>();
            }
            total += w * row_loss;
            let g = &mut dlogits[t * v..(t + 1) * v];
            for (gj, lpj) in g.iter_mut().zip(&lp) {
                *gj = w * (lpj.exp() - uniform);
            }
            g[y] -= w * (1.0 - smoothing);
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, dlogits },
            &[logits],
        ))
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let mut out = self.value(x).clone();
        for (o, k) in out.data_mut().iter_mut().zip(&keep) {
            *o *= k;
        }
        self.push(out, Op::Dropout { x, keep }, &[x])
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
            None => node.grad = Some(contribution),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let n = node.value.numel();
        f(node.grad.get_or_insert_with(|| vec![0.0; n]));
    }

    /// Reverse sweep from a scalar `loss`, populating gradients of every
    /// node that depends on a [`Graph::param`] leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::Rank { shape });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    let bv = self.value(*b).data();
                    kernels::gemm(m, n, k, 1.0, View::rows(g, n), View::transposed(bv, n), 0.0, &mut da, k);
                    self.accumulate(*a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    let av = self.value(*a).data();
                    kernels::gemm(k, m, n, 1.0, View::transposed(av, k), View::rows(g, n), 0.0, &mut db, n);
                    self.accumulate(*b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate_with(*a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate_with(*b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::AddBias(x, bias) => {
                self.accumulate_with(*x, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let n = self.value(*bias).numel();
                self.accumulate_with(*bias, |d| {
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate_with(*x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += f * b));
            }
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(gv, &o)| if o > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(*x, dx);
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate_with(*x, |d| d.iter_mut().for_each(|v| *v += g0));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data().to_vec();
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; g.len()];
                for (r, (grow, xrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        dgain[j] += grow[j] * xrow[j];
                        dbias[j] += grow[j];
                        let dxh = grow[j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xrow[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    let out = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        let dxh = grow[j] * gv[j];
                        out[j] = rstd[r] * (dxh - mean_dxhat - xrow[j] * mean_dxhat_xhat);
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*gain, dgain);
                self.accumulate(*bias, dbias);
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                self.accumulate_with(*table, |dt| {
                    for (row, &id) in g.chunks(d).zip(ids) {
                        dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MaskedSoftmax(x) => {
                let p = self.nodes[i].value.data();
                let t = self.nodes[i].value.cols();
                let mut dx = vec![0.0; p.len()];
                for ((dxr, pr), gr) in dx.chunks_mut(t).zip(p.chunks(t)).zip(g.chunks(t)) {
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &pv), &gv) in dxr.iter_mut().zip(pr).zip(gr) {
                        *o = pv * (gv - dot);
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let d = self.value(*q).cols();
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    d,
                    layout.heads,
                    &layout.q_lens,
                    &layout.k_lens,
                );
                self.accumulate(*q, dq);
                self.accumulate(*k, dk);
                self.accumulate(*v, dv);
            }
            Op::CrossEntropy { logits, dlogits } => {
                let g0 = g[0];
                self.accumulate_with(*logits, |d| {
                    d.iter_mut().zip(dlogits).for_each(|(a, b)| *a += g0 * b)
                });
            }
            Op::Dropout { x, keep } => {
                let dx = g.iter().zip(keep).map(|(a, b)| a * b).collect();
                self.accumulate(*x, dx);
            }
        }
    }
}
