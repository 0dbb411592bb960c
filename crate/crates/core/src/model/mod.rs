//! Encoder–decoder transformer shared by the autoregressive and
//! non-autoregressive modes.
//!
//! Each decoder layer runs masked self-attention, positional attention
//! (queries and keys from sinusoidal position embeddings, values from the
//! hidden states), encoder–decoder attention and a feed-forward block, each
//! followed by a residual connection and layer norm. The same parameter set
//! serves both modes; only the decoder input and the self-attention mask
//! differ.

mod infer;
mod inputs;

pub use infer::{DecoderState, EncodedSource, InferenceModel};
pub use inputs::{build_mask, hard_copy, shift_right};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AttentionLayout, AttentionMask, Graph, MaskKind, ParamSet, Tensor, Var};
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_hidden: 64,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 52,
            max_len: 64,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "model.d_model ({}) must be a positive multiple of model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.d_hidden == 0 || self.n_layers == 0 {
            return fail("model.d_hidden and model.n_layers must be positive".into());
        }
        if self.vocab_size <= crate::data::FIRST_CONTENT_ID {
            return fail(format!("model.vocab_size ({}) leaves no content tokens", self.vocab_size));
        }
        if self.max_len == 0 {
            return fail("model.max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("model.dropout ({}) must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Per-sequence encoder states.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub states: Tensor,
    pub src_len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    attn: Attn,
    ln1: Norm,
    ffn: Ffn,
    ln2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    self_attn: Attn,
    ln1: Norm,
    pos_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ffn: Ffn,
    ln4: Norm,
}

enum Init {
    Xavier,
    Embedding,
    Zeros,
    Ones,
}

/// Parameter layout plus fixed (non-learned) tables; weights live in a
/// [`ParamSet`] so one layout serves teacher and student alike.
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: ModelConfig,
    embed: usize,
    out_w: usize,
    out_b: usize,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    positions: Tensor,
    specs: Vec<(String, Vec<usize>)>,
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        let mut w = |n: &str| self.add(format!("{prefix}.{n}"), vec![d, d], Init::Xavier);
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |n: &str| self.add(format!("{prefix}.{n}"), vec![d], Init::Zeros);
        let (bq, bk, bv, bo) = (b("bq"), b("bk"), b("bv"), b("bo"));
        Attn {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.add(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, h: usize) -> Ffn {
        Ffn {
            w1: self.add(format!("{prefix}.w1"), vec![d, h], Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), vec![h], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), vec![h, d], Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), vec![d], Init::Zeros),
        }
    }
}

/// Sinusoidal position table, `max_len × d`.
pub fn sinusoid_table(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![max_len, d], data)
}

/// Embedded ragged batch on a graph: row-stacked states plus segment lengths.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Var,
    pub lens: Vec<usize>,
}

impl Transformer {
    fn layout(cfg: &ModelConfig) -> (Self, Vec<(String, Vec<usize>, Init)>) {
        let (d, h, v) = (cfg.d_model, cfg.d_hidden, cfg.vocab_size);
        let mut b = LayoutBuilder { specs: vec![] };
        let embed = b.add("embed".into(), vec![v, d], Init::Embedding);
        let enc = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncLayer {
                    attn: b.attn(&format!("{p}.self"), d),
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, h),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                }
            })
            .collect();
        let dec = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("dec.{l}");
                DecLayer {
                    self_attn: b.attn(&format!("{p}.self"), d),
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    pos_attn: b.attn(&format!("{p}.pos"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cross: b.attn(&format!("{p}.cross"), d),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, h),
                    ln4: b.norm(&format!("{p}.ln4"), d),
                }
            })
            .collect();
        let out_w = b.add("out.w".into(), vec![d, v], Init::Xavier);
        let out_b = b.add("out.b".into(), vec![v], Init::Zeros);
        let specs = b.specs.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
        let model = Self {
            cfg: cfg.clone(),
            embed,
            out_w,
            out_b,
            enc,
            dec,
            positions: sinusoid_table(cfg.max_len, d),
            specs,
        };
        (model, b.specs)
    }

    /// Fresh model with randomly initialized parameters.
    pub fn init(cfg: &ModelConfig, rng: &mut SeededRng) -> Result<(Self, ParamSet)> {
        cfg.validate()?;
        let (model, specs) = Self::layout(cfg);
        let mut params = ParamSet::new();
        for (name, shape, init) in specs {
            let numel: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
                Init::Xavier => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
                }
                Init::Embedding => {
                    let limit = (3.0 / cfg.d_model as f64).sqrt();
                    (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
                }
            };
            params.push(name, Tensor::new(shape, data)?);
        }
        Ok((model, params))
    }

    /// Layout for `cfg`, checked against an existing parameter set.
    pub fn for_params(cfg: &ModelConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let (model, _) = Self::layout(cfg);
        let matches = model.specs.len() == params.len()
            && model
                .specs
                .iter()
                .zip(params.iter())
                .all(|((n, s), (pn, t))| n == pn && s.as_slice() == t.shape());
        if !matches {
            return Err(Error::Config(
                "checkpoint parameters do not match the model configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub(crate) fn positions(&self) -> &Tensor {
        &self.positions
    }

    fn check_seq(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Input("empty sequence".into()));
        }
        if seq.len() > self.cfg.max_len {
            return Err(Error::Length {
                len: seq.len(),
                max_len: self.cfg.max_len,
            });
        }
        crate::tensor::kernels::check_targets(seq, self.cfg.vocab_size)
    }

    /// Binds every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph, params: &ParamSet) -> Vec<Var> {
        params.tensors().iter().map(|t| g.param(t.clone())).collect()
    }

    /// Binds every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph, params: &ParamSet) -> Vec<Var> {
        params.tensors().iter().map(|t| g.constant(t.clone())).collect()
    }

    fn embed_tokens(
        &self,
        g: &mut Graph,
        p: &[Var],
        seqs: &[&[usize]],
        with_positions: bool,
    ) -> Result<Var> {
        let d = self.cfg.d_model;
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let e = g.embedding(p[self.embed], &ids)?;
        let e = g.scale(e, (d as f64).sqrt());
        if !with_positions {
            return Ok(e);
        }
        let pe = g.constant(self.position_rows(seqs.iter().map(|s| s.len())));
        g.add(e, pe)
    }

    fn position_rows(&self, lens: impl Iterator<Item = usize>) -> Tensor {
        let d = self.cfg.d_model;
        let mut rows = Vec::new();
        let mut n = 0;
        for len in lens {
            rows.extend_from_slice(&self.positions.data()[..len * d]);
            n += len;
        }
        Tensor::from_parts(vec![n, d], rows)
    }

    fn linear(&self, g: &mut Graph, p: &[Var], x: Var, w: usize, b: usize) -> Result<Var> {
        let y = g.matmul(x, p[w])?;
        g.add_bias(y, p[b])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_block(
        &self,
        g: &mut Graph,
        p: &[Var],
        a: &Attn,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        layout: AttentionLayout,
    ) -> Result<Var> {
        let q = self.linear(g, p, q_in, a.wq, a.bq)?;
        let k = self.linear(g, p, k_in, a.wk, a.bk)?;
        let v = self.linear(g, p, v_in, a.wv, a.bv)?;
        let ctx = g.attention(q, k, v, layout)?;
        self.linear(g, p, ctx, a.wo, a.bo)
    }

    fn ffn_block(&self, g: &mut Graph, p: &[Var], f: &Ffn, x: Var) -> Result<Var> {
        let h = self.linear(g, p, x, f.w1, f.b1)?;
        let h = g.relu(h);
        self.linear(g, p, h, f.w2, f.b2)
    }

    fn residual(
        &self,
        g: &mut Graph,
        p: &[Var],
        x: Var,
        y: Var,
        n: &Norm,
        rng: &mut Option<&mut SeededRng>,
    ) -> Result<Var> {
        let y = match rng {
            Some(r) if self.cfg.dropout > 0.0 => g.dropout(y, self.cfg.dropout, &mut **r),
            _ => y,
        };
        let s = g.add(x, y)?;
        g.layer_norm(s, p[n.gain], p[n.bias])
    }

    /// Encodes a batch of source sequences into row-stacked states.
    /// `rng` enables dropout (training only).
    pub fn encode_batch(
        &self,
        g: &mut Graph,
        p: &[Var],
        srcs: &[&[usize]],
        rng: Option<&mut SeededRng>,
    ) -> Result<Encoded> {
        self.encode_inner(g, p, srcs, rng, true)
    }

    fn encode_inner(
        &self,
        g: &mut Graph,
        p: &[Var],
        srcs: &[&[usize]],
        mut rng: Option<&mut SeededRng>,
        with_positions: bool,
    ) -> Result<Encoded> {
        if srcs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        for s in srcs {
            self.check_seq(s)?;
        }
        let lens: Vec<usize> = srcs.iter().map(|s| s.len()).collect();
        let mut x = self.embed_tokens(g, p, srcs, with_positions)?;
        if let Some(r) = rng.as_deref_mut() {
            x = g.dropout(x, self.cfg.dropout, r);
        }
        let heads = self.cfg.n_heads;
        for layer in &self.enc {
            let layout = AttentionLayout {
                heads,
                q_lens: lens.clone(),
                k_lens: lens.clone(),
                mask: Some(MaskKind::Nat),
            };
            let y = self.attention_block(g, p, &layer.attn, x, x, x, layout)?;
            x = self.residual(g, p, x, y, &layer.ln1, &mut rng)?;
            let y = self.ffn_block(g, p, &layer.ffn, x)?;
            x = self.residual(g, p, x, y, &layer.ln2, &mut rng)?;
        }
        Ok(Encoded { states: x, lens })
    }

    /// Decoder logits (`sum(T_y) × V`) for a batch of decoder inputs, all
    /// under the same self-attention mask kind.
    pub fn decode_batch(
        &self,
        g: &mut Graph,
        p: &[Var],
        dec_inputs: &[&[usize]],
        mask: MaskKind,
        enc: &Encoded,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Var> {
        if dec_inputs.len() != enc.lens.len() {
            return Err(Error::Shape {
                op: "decode batch",
                lhs: vec![dec_inputs.len()],
                rhs: vec![enc.lens.len()],
            });
        }
        for s in dec_inputs {
            self.check_seq(s)?;
        }
        let lens: Vec<usize> = dec_inputs.iter().map(|s| s.len()).collect();
        let mut x = self.embed_tokens(g, p, dec_inputs, true)?;
        if let Some(r) = rng.as_deref_mut() {
            x = g.dropout(x, self.cfg.dropout, r);
        }
        let pos = g.constant(self.position_rows(lens.iter().copied()));
        let heads = self.cfg.n_heads;
        let self_layout = AttentionLayout {
            heads,
            q_lens: lens.clone(),
            k_lens: lens.clone(),
            mask: Some(mask),
        };
        let cross_layout = AttentionLayout {
            heads,
            q_lens: lens.clone(),
            k_lens: enc.lens.clone(),
            mask: None,
        };
        for layer in &self.dec {
            let y = self.attention_block(g, p, &layer.self_attn, x, x, x, self_layout.clone())?;
            x = self.residual(g, p, x, y, &layer.ln1, &mut rng)?;
            let y = self.attention_block(g, p, &layer.pos_attn, pos, pos, x, self_layout.clone())?;
            x = self.residual(g, p, x, y, &layer.ln2, &mut rng)?;
            let y = self.attention_block(
                g,
                p,
                &layer.cross,
                x,
                enc.states,
                enc.states,
                cross_layout.clone(),
            )?;
            x = self.residual(g, p, x, y, &layer.ln3, &mut rng)?;
            let y = self.ffn_block(g, p, &layer.ffn, x)?;
            x = self.residual(g, p, x, y, &layer.ln4, &mut rng)?;
        }
        self.linear(g, p, x, self.out_w, self.out_b)
    }

    /// Encoder states for one source sequence.
    pub fn encode(&self, params: &ParamSet, src: &[usize]) -> Result<EncoderOutput> {
        self.encode_single(params, src, true)
    }

    pub(crate) fn encode_single(
        &self,
        params: &ParamSet,
        src: &[usize],
        with_positions: bool,
    ) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g, params);
        let enc = self.encode_inner(&mut g, &p, &[src], None, with_positions)?;
        Ok(EncoderOutput {
            states: g.value(enc.states).clone(),
            src_len: src.len(),
        })
    }

    /// Unnormalized logits (`T_y × V`) for one decoder input under `mask`.
    pub fn decode(
        &self,
        params: &ParamSet,
        dec_input: &[usize],
        mask: &AttentionMask,
        enc: &EncoderOutput,
    ) -> Result<Tensor> {
        if mask.size() != dec_input.len() {
            return Err(Error::Shape {
                op: "decode mask",
                lhs: vec![mask.size(), mask.size()],
                rhs: vec![dec_input.len()],
            });
        }
        let kind = mask
            .kind()
            .ok_or_else(|| Error::Input("decoder masks must be AT or NAT".into()))?;
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g, params);
        let states = g.constant(enc.states.clone());
        let enc = Encoded {
            states,
            lens: vec![enc.src_len],
        };
        let logits = self.decode_batch(&mut g, &p, &[dec_input], kind, &enc, None)?;
        Ok(g.value(logits).clone())
    }

    // Index accessors for the gradient-free path.
    pub(crate) fn embed_idx(&self) -> usize {
        self.embed
    }

    pub(crate) fn out_idx(&self) -> (usize, usize) {
        (self.out_w, self.out_b)
    }
}
