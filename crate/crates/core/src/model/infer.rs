//! Gradient-free forward passes: full-sequence decoding and a KV-cached
//! incremental decoder for autoregressive generation.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Attn, Ffn, Norm, Transformer};
use crate::error::{Error, Result};
use crate::tensor::kernels::{self, attention_forward, gemm, View};
use crate::tensor::{MaskKind, ParamSet};

/// Borrowed model + weights with per-layer position projections
/// precomputed. Counts decoder forward passes.
pub struct InferenceModel<'a> {
    model: &'a Transformer,
    params: &'a ParamSet,
    pos_q: Vec<Vec<f64>>,
    pos_k: Vec<Vec<f64>>,
    forwards: AtomicUsize,
}

/// Encoder states for one source plus the cross-attention keys/values of
/// every decoder layer.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub len: usize,
    pub states: Vec<f64>,
    cross: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Per-hypothesis cache for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pos: usize,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    self_k: Vec<f64>,
    self_v: Vec<f64>,
    pos_v: Vec<f64>,
}

impl DecoderState {
    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

impl<'a> InferenceModel<'a> {
    pub fn new(model: &'a Transformer, params: &'a ParamSet) -> Self {
        let d = model.cfg.d_model;
        let max_len = model.cfg.max_len;
        let table = model.positions().data();
        let mut pos_q = Vec::new();
        let mut pos_k = Vec::new();
        for layer in &model.dec {
            let a = &layer.pos_attn;
            pos_q.push(linear(params, table, max_len, d, a.wq, a.bq));
            pos_k.push(linear(params, table, max_len, d, a.wk, a.bk));
        }
        Self {
            model,
            params,
            pos_q,
            pos_k,
            forwards: AtomicUsize::new(0),
        }
    }

    pub fn model(&self) -> &Transformer {
        self.model
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    /// Decoder forward passes executed since construction or the last reset.
    pub fn decoder_forwards(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }

    fn d(&self) -> usize {
        self.model.cfg.d_model
    }

    fn embed(&self, tokens: &[usize], start: usize) -> Vec<f64> {
        let d = self.d();
        let table = self.params.get(self.model.embed_idx());
        let scale = (d as f64).sqrt();
        let pe = self.model.positions();
        let mut x = Vec::with_capacity(tokens.len() * d);
        for (t, &id) in tokens.iter().enumerate() {
            let p = pe.row(start + t);
            x.extend(table.row(id).iter().zip(p).map(|(e, p)| e * scale + p));
        }
        x
    }

    fn check(&self, seq: &[usize], extra: usize) -> Result<()> {
        let cfg = &self.model.cfg;
        if seq.is_empty() && extra == 0 {
            return Err(Error::Input("empty sequence".into()));
        }
        if seq.len() + extra > cfg.max_len {
            return Err(Error::Length {
                len: seq.len() + extra,
                max_len: cfg.max_len,
            });
        }
        kernels::check_targets(seq, cfg.vocab_size)
    }

    pub fn encode(&self, src: &[usize]) -> Result<EncodedSource> {
        self.check(src, 0)?;
        let (d, n) = (self.d(), src.len());
        let mut x = self.embed(src, 0);
        for layer in &self.model.enc {
            let y = self.self_attention(&layer.attn, &x, n, Some(MaskKind::Nat));
            x = self.add_norm(&x, &y, &layer.ln1);
            let y = self.ffn(&layer.ffn, &x, n);
            x = self.add_norm(&x, &y, &layer.ln2);
        }
        let cross = self
            .model
            .dec
            .iter()
            .map(|l| {
                let c = &l.cross;
                (
                    linear(self.params, &x, n, d, c.wk, c.bk),
                    linear(self.params, &x, n, d, c.wv, c.bv),
                )
            })
            .collect();
        Ok(EncodedSource {
            len: n,
            states: x,
            cross,
        })
    }

    fn self_attention(&self, a: &Attn, x: &[f64], n: usize, mask: Option<MaskKind>) -> Vec<f64> {
        let d = self.d();
        let q = linear(self.params, x, n, d, a.wq, a.bq);
        let k = linear(self.params, x, n, d, a.wk, a.bk);
        let v = linear(self.params, x, n, d, a.wv, a.bv);
        let (ctx, _) = attention_forward(&q, &k, &v, d, self.model.cfg.n_heads, &[n], &[n], mask);
        linear(self.params, &ctx, n, d, a.wo, a.bo)
    }

    fn ffn(&self, f: &Ffn, x: &[f64], n: usize) -> Vec<f64> {
        let (d, h) = (self.d(), self.model.cfg.d_hidden);
        let mut hid = linear(self.params, x, n, d, f.w1, f.b1);
        hid.iter_mut().for_each(|v| *v = v.max(0.0));
        linear(self.params, &hid, n, h, f.w2, f.b2)
    }

    fn add_norm(&self, x: &[f64], y: &[f64], n: &Norm) -> Vec<f64> {
        let s: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
        let (xhat, _) = kernels::layer_norm_core(&s, self.d());
        kernels::affine_rows(
            &xhat,
            self.params.get(n.gain).data(),
            self.params.get(n.bias).data(),
        )
    }

    fn logits(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (w, b) = self.model.out_idx();
        linear(self.params, x, n, self.d(), w, b)
    }

    /// Logits (`T × V`, row-major) for a whole decoder input in one pass.
    pub fn decode_full(&self, enc: &EncodedSource, dec_input: &[usize], mask: MaskKind) -> Result<Vec<f64>> {
        self.check(dec_input, 0)?;
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let (d, heads, n) = (self.d(), self.model.cfg.n_heads, dec_input.len());
        let mut x = self.embed(dec_input, 0);
        for (l, layer) in self.model.dec.iter().enumerate() {
            let y = self.self_attention(&layer.self_attn, &x, n, Some(mask));
            x = self.add_norm(&x, &y, &layer.ln1);

            let a = &layer.pos_attn;
            let v = linear(self.params, &x, n, d, a.wv, a.bv);
            let (ctx, _) = attention_forward(
                &self.pos_q[l][..n * d],
                &self.pos_k[l][..n * d],
                &v,
                d,
                heads,
                &[n],
                &[n],
                Some(mask),
            );
            let y = linear(self.params, &ctx, n, d, a.wo, a.bo);
            x = self.add_norm(&x, &y, &layer.ln2);

            let c = &layer.cross;
            let q = linear(self.params, &x, n, d, c.wq, c.bq);
            let (ck, cv) = &enc.cross[l];
            let (ctx, _) = attention_forward(&q, ck, cv, d, heads, &[n], &[enc.len], None);
            let y = linear(self.params, &ctx, n, d, c.wo, c.bo);
            x = self.add_norm(&x, &y, &layer.ln3);

            let y = self.ffn(&layer.ffn, &x, n);
            x = self.add_norm(&x, &y, &layer.ln4);
        }
        Ok(self.logits(&x, n))
    }

    pub fn start(&self) -> DecoderState {
        DecoderState {
            pos: 0,
            layers: vec![LayerCache::default(); self.model.dec.len()],
        }
    }

    /// Feeds one token at the next position under the causal mask and
    /// returns that position's logits. Equivalent to row `t` of
    /// [`InferenceModel::decode_full`] with [`MaskKind::At`].
    pub fn step(&self, enc: &EncodedSource, state: &mut DecoderState, token: usize) -> Result<Vec<f64>> {
        self.check(&[token], state.pos)?;
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let (d, heads) = (self.d(), self.model.cfg.n_heads);
        let t = state.pos;
        let mut x = self.embed(&[token], t);
        for (l, layer) in self.model.dec.iter().enumerate() {
            let cache = &mut state.layers[l];

            let a = &layer.self_attn;
            let q = linear(self.params, &x, 1, d, a.wq, a.bq);
            cache.self_k.extend(linear(self.params, &x, 1, d, a.wk, a.bk));
            cache.self_v.extend(linear(self.params, &x, 1, d, a.wv, a.bv));
            let (ctx, _) = attention_forward(&q, &cache.self_k, &cache.self_v, d, heads, &[1], &[t + 1], None);
            let y = linear(self.params, &ctx, 1, d, a.wo, a.bo);
            x = self.add_norm(&x, &y, &layer.ln1);

            let a = &layer.pos_attn;
            cache.pos_v.extend(linear(self.params, &x, 1, d, a.wv, a.bv));
            let (ctx, _) = attention_forward(
                &self.pos_q[l][t * d..(t + 1) * d],
                &self.pos_k[l][..(t + 1) * d],
                &cache.pos_v,
                d,
                heads,
                &[1],
                &[t + 1],
                None,
            );
            let y = linear(self.params, &ctx, 1, d, a.wo, a.bo);
            x = self.add_norm(&x, &y, &layer.ln2);

            let c = &layer.cross;
            let q = linear(self.params, &x, 1, d, c.wq, c.bq);
            let (ck, cv) = &enc.cross[l];
            let (ctx, _) = attention_forward(&q, ck, cv, d, heads, &[1], &[enc.len], None);
            let y = linear(self.params, &ctx, 1, d, c.wo, c.bo);
            x = self.add_norm(&x, &y, &layer.ln3);

            let y = self.ffn(&layer.ffn, &x, 1);
            x = self.add_norm(&x, &y, &layer.ln4);
        }
        state.pos += 1;
        Ok(self.logits(&x, 1))
    }
}

/// `x(n×din) · W + b` using the parameter tensors at `w` and `b`.
fn linear(params: &ParamSet, x: &[f64], n: usize, din: usize, w: usize, b: usize) -> Vec<f64> {
    let wt = params.get(w);
    let dout = wt.cols();
    let bias = params.get(b).data();
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    gemm(n, din, dout, 1.0, View::rows(x, din), View::rows(wt.data(), dout), 1.0, &mut out, dout);
    out
}
