//! Forward (and a few backward) numeric kernels shared by the autodiff graph
//! and the gradient-free inference path.

use super::{AttentionMask, MaskKind, Tensor};
use crate::error::{Error, Result};

/// Additive penalty for masked scores before normalization.
pub const MASK_PENALTY: f64 = -1e9;
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Strided matrix view: element `(r, c)` lives at `r * rs + c * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "strided view out of bounds");
        }
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, with `c` row-major of width `ldc`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!((m - 1) * ldc + n <= c.len(), "gemm output out of bounds");
    // SAFETY: every pointer/stride pair was bounds-checked above for the
    // extents dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        1.0,
        View::rows(a.data(), k),
        View::rows(b.data(), n),
        0.0,
        &mut out,
        n,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// In-place softmax of one row restricted to `allowed` columns. Disallowed
/// entries get [`MASK_PENALTY`] before normalization and are then forced to
/// exactly zero.
#[inline]
pub(crate) fn softmax_row(row: &mut [f64], allowed: impl Fn(usize) -> bool) {
    let mut max = f64::NEG_INFINITY;
    for (j, v) in row.iter_mut().enumerate() {
        if !allowed(j) {
            *v += MASK_PENALTY;
        }
        max = max.max(*v);
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for (j, v) in row.iter_mut().enumerate() {
        *v = if allowed(j) { *v / sum } else { 0.0 };
    }
}

pub fn masked_softmax(scores: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    let t = mask.size();
    if scores.shape() != [t, t] {
        return Err(Error::Shape {
            op: "masked_softmax",
            lhs: scores.shape().to_vec(),
            rhs: vec![t, t],
        });
    }
    if let Some(row) = (0..t).find(|&i| (0..t).all(|j| !mask.get(i, j))) {
        return Err(Error::DegenerateMask { row });
    }
    let mut out = scores.data().to_vec();
    for (i, row) in out.chunks_mut(t).enumerate() {
        softmax_row(row, |j| mask.get(i, j));
    }
    Ok(Tensor::from_parts(vec![t, t], out))
}

/// Normalized rows plus the per-row reciprocal std, for backward.
pub(crate) fn layer_norm_core(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let src = &x[r * d..(r + 1) * d];
        let mean = src.iter().sum::<f64>() / d as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = inv;
        for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(src) {
            *o = (v - mean) * inv;
        }
    }
    (xhat, rstd)
}

pub(crate) fn affine_rows(xhat: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = gain.len();
    let mut out = xhat.to_vec();
    for row in out.chunks_mut(d) {
        for ((o, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *o = *o * g + b;
        }
    }
    out
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = x.cols();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let (xhat, _) = layer_norm_core(x.data(), d);
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        affine_rows(&xhat, gain.data(), bias.data()),
    ))
}

pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

pub(crate) fn check_targets(targets: &[usize], vocab: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= vocab) {
        Some(&id) => Err(Error::Index { id, vocab }),
        None => Ok(()),
    }
}

/// Summed negative log-likelihood `-Σ_t w_t log softmax(logits_t)[y_t]`.
///
/// `weights` is the position mask (1 = counted). Pass `None` to count every row.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    let v = logits.cols();
    if logits.rows() != targets.len() || weights.is_some_and(|w| w.len() != targets.len()) {
        return Err(Error::Shape {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    check_targets(targets, v)?;
    let mut lp = vec![0.0; v];
    let mut total = 0.0;
    for (t, &y) in targets.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[t]);
        if w == 0.0 {
            continue;
        }
        log_softmax_row(logits.row(t), &mut lp);
        total -= w * lp[y];
    }
    Ok(total)
}

/// Multi-head scaled dot-product attention over ragged segments.
///
/// `q` is `sum(q_lens) × d`, `k`/`v` are `sum(k_lens) × d`. Segment `s` of
/// the queries attends only to segment `s` of the keys. Returns the output
/// (`sum(q_lens) × d`) and the attention probabilities, stored per segment
/// and head as contiguous `Tq × Tk` blocks.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: usize,
    heads: usize,
    q_lens: &[usize],
    k_lens: &[usize],
    mask: Option<MaskKind>,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let prob_len: usize = q_lens.iter().zip(k_lens).map(|(a, b)| a * b).sum::<usize>() * heads;
    let mut probs = vec![0.0; prob_len];
    let mut out = vec![0.0; q.len()];
    let (mut qo, mut ko, mut po) = (0, 0, 0);
    for (&tq, &tk) in q_lens.iter().zip(k_lens) {
        for h in 0..heads {
            let p = &mut probs[po..po + tq * tk];
            let qh = View::rows(&q[qo * d + h * dh..], d);
            let kt = View::transposed(&k[ko * d + h * dh..], d);
            gemm(tq, dh, tk, scale, qh, kt, 0.0, p, tk);
            for (i, row) in p.chunks_mut(tk).enumerate() {
                match mask {
                    Some(kind) => softmax_row(row, |j| kind.allows(i, j)),
                    None => softmax_row(row, |_| true),
                }
            }
            let vh = View::rows(&v[ko * d + h * dh..], d);
            gemm(
                tq,
                tk,
                dh,
                1.0,
                View::rows(p, tk),
                vh,
                0.0,
                &mut out[qo * d + h * dh..],
                d,
            );
            po += tq * tk;
        }
        qo += tq;
        ko += tk;
    }
    (out, probs)
}

/// Gradients of [`attention_forward`] w.r.t. `q`, `k`, `v` given the
/// upstream gradient `dout` and the cached probabilities.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    d: usize,
    heads: usize,
    q_lens: &[usize],
    k_lens: &[usize],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let max_block = q_lens.iter().zip(k_lens).map(|(a, b)| a * b).max().unwrap_or(0);
    let mut dp = vec![0.0; max_block];
    let (mut qo, mut ko, mut po) = (0, 0, 0);
    for (&tq, &tk) in q_lens.iter().zip(k_lens) {
        for h in 0..heads {
            let p = &probs[po..po + tq * tk];
            let dout_h = View::rows(&dout[qo * d + h * dh..], d);
            // dV += Pᵀ · dO
            gemm(
                tk,
                tq,
                dh,
                1.0,
                View::transposed(p, tk),
                dout_h,
                1.0,
                &mut dv[ko * d + h * dh..],
                d,
            );
            // dP = dO · Vᵀ
            let dp = &mut dp[..tq * tk];
            gemm(
                tq,
                dh,
                tk,
                1.0,
                dout_h,
                View::transposed(&v[ko * d + h * dh..], d),
                0.0,
                dp,
                tk,
            );
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), times the score scale
            for (dp_row, p_row) in dp.chunks_mut(tk).zip(p.chunks(tk)) {
                let dot: f64 = dp_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                for (g, &pv) in dp_row.iter_mut().zip(p_row) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            gemm(
                tq,
                tk,
                dh,
                1.0,
                View::rows(dp, tk),
                View::rows(&k[ko * d + h * dh..], d),
                1.0,
                &mut dq[qo * d + h * dh..],
                d,
            );
            gemm(
                tk,
                tq,
                dh,
                1.0,
                View::transposed(dp, tk),
                View::rows(&q[qo * d + h * dh..], d),
                1.0,
                &mut dk[ko * d + h * dh..],
                d,
            );
            po += tq * tk;
        }
        qo += tq;
        ko += tk;
    }
    (dq, dk, dv)
}
