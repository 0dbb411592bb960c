//! Losses, the Adam optimizer, sequence-level distillation and the
//! three-stage AT → curriculum → NAT pipeline.

mod distill;
mod pipeline;

pub use distill::{distill_corpus, DistillReport};
pub use pipeline::{
    evaluate_bleu, records_csv, run_pipeline, train_teacher, DecodeMode, EpochSampler, PipelineOutput,
    TrainConfig, Trainer, Variant,
};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::curriculum::{
    mix_decoder_input, pacing_value, sample_substitution_mask, select_mask_kind, sentence_level_mix,
    stage_of_step, CurriculumConfig, Stage, SubstitutionLevel,
};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{hard_copy, shift_right, Transformer};
use crate::tensor::{Graph, MaskKind, ParamSet};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub scale: f64,
    /// Constant learning rate in place of the warmup schedule.
    pub fixed_lr: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 400,
            scale: 1.0,
            fixed_lr: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("optimizer.beta1/beta2 must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 || self.scale <= 0.0 || self.warmup_steps == 0 {
            return Err(Error::Config(
                "optimizer.eps, optimizer.scale and optimizer.warmup_steps must be positive".into(),
            ));
        }
        if self.fixed_lr.is_some_and(|lr| lr <= 0.0) {
            return Err(Error::Config("optimizer.fixed_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Inverse-square-root schedule with linear warmup, before scaling:
/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: usize, d_model: usize, warmup: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cfg: OptimizerConfig,
    pub d_model: usize,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(cfg: OptimizerConfig, params: &ParamSet, d_model: usize) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            d_model,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Updates applied so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Learning rate of the next update.
    pub fn next_lr(&self) -> f64 {
        match self.cfg.fixed_lr {
            Some(lr) => lr,
            None => self.cfg.scale * lr_schedule(self.step + 1, self.d_model, self.cfg.warmup_steps),
        }
    }

    /// One Adam update. `grads[i]` of `None` counts as zero.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape {
                op: "optimizer update",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        let lr = self.next_lr();
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_deref();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub stage: Stage,
    /// 0 during AT training, 1 during NAT training.
    pub alpha: f64,
    pub mask: MaskKind,
    /// Mean token cross-entropy of the batch before the update.
    pub loss: f64,
    pub tokens_per_sec: f64,
    pub val_bleu: Option<f64>,
}

/// Decoder inputs, mask and substitution rate for one batch at `stage`.
pub fn stage_inputs(
    batch: &Batch,
    stage: Stage,
    cfg: &CurriculumConfig,
    rng: &mut SeededRng,
) -> Result<(Vec<Vec<usize>>, MaskKind, f64)> {
    let z_at = |i: usize| shift_right(batch.target(i));
    let z_nat = |i: usize| hard_copy(batch.source(i), batch.tgt_lens[i]);
    let n = batch.len();
    Ok(match stage {
        Stage::AtTrain => ((0..n).map(z_at).collect(), MaskKind::At, 0.0),
        Stage::NatTrain => ((0..n).map(z_nat).collect(), MaskKind::Nat, 1.0),
        Stage::Curriculum(i) => {
            let alpha = pacing_value(&cfg.pacing_spec()?, i)?;
            let inputs = (0..n)
                .map(|s| {
                    let (a, b) = (z_at(s), z_nat(s));
                    match cfg.substitution {
                        SubstitutionLevel::Token => {
                            let m = sample_substitution_mask(alpha, a.len(), rng);
                            mix_decoder_input(&a, &b, &m)
                        }
                        SubstitutionLevel::Sentence => sentence_level_mix(&a, &b, alpha, rng),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            (inputs, select_mask_kind(alpha, cfg.mask_threshold), alpha)
        }
    })
}

/// Mean token cross-entropy of `batch` for the given decoder inputs, with
/// gradients for every parameter when `grads` is set. `dropout_rng`
/// enables dropout.
pub fn batch_loss(
    model: &Transformer,
    params: &ParamSet,
    batch: &Batch,
    dec_inputs: &[Vec<usize>],
    mask: MaskKind,
    label_smoothing: f64,
    dropout_rng: Option<&mut SeededRng>,
    grads: bool,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut g = Graph::new();
    let p = if grads {
        model.bind(&mut g, params)
    } else {
        model.bind_frozen(&mut g, params)
    };
    let srcs: Vec<&[usize]> = (0..batch.len()).map(|i| batch.source(i)).collect();
    let decs: Vec<&[usize]> = dec_inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<usize> = (0..batch.len()).flat_map(|i| batch.target(i).iter().copied()).collect();
    let tokens = targets.len() as f64;
    let (mut enc_rng, mut dec_rng) = match dropout_rng {
        Some(r) => {
            let a = SeededRng::seed_from_u64(r.gen());
            let b = SeededRng::seed_from_u64(r.gen());
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let enc = model.encode_batch(&mut g, &p, &srcs, enc_rng.as_mut())?;
    let logits = model.decode_batch(&mut g, &p, &decs, mask, &enc, dec_rng.as_mut())?;
    let weights = vec![1.0 / tokens; targets.len()];
    let loss = g.cross_entropy(logits, &targets, &weights, label_smoothing)?;
    let value = g.value(loss).item()?;
    if !grads {
        return Ok((value, vec![]));
    }
    g.backward(loss)?;
    let out = p.iter().map(|&v| g.take_grad(v)).collect();
    Ok((value, out))
}

/// One optimizer update at `global_step`, with decoder inputs and mask
/// chosen by the stage the step falls in.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &Transformer,
    params: &mut ParamSet,
    opt: &mut OptimizerState,
    batch: &Batch,
    global_step: usize,
    cfg: &CurriculumConfig,
    rng: &mut SeededRng,
    label_smoothing: f64,
) -> Result<TrainRecord> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let start = Instant::now();
    let stage = stage_of_step(global_step, cfg);
    // Independent streams so that stages drawing no substitution noise
    // still see the same dropout noise.
    let mut sub_rng = SeededRng::seed_from_u64(rng.gen());
    let mut drop_rng = SeededRng::seed_from_u64(rng.gen());
    let (inputs, mask, alpha) = stage_inputs(batch, stage, cfg, &mut sub_rng)?;
    let dropout = (model.config().dropout > 0.0).then_some(&mut drop_rng);
    let (loss, grads) = batch_loss(model, params, batch, &inputs, mask, label_smoothing, dropout, true)?;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            step: global_step,
            stage: stage.name().to_string(),
        });
    }
    opt.apply(params, &grads)?;
    let secs = start.elapsed().as_secs_f64().max(1e-12);
    Ok(TrainRecord {
        step: global_step,
        stage,
        alpha,
        mask,
        loss,
        tokens_per_sec: batch.target_tokens() as f64 / secs,
        val_bleu: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::PacingKind;
    use crate::model::ModelConfig;

    fn tiny() -> (Transformer, ParamSet) {
        let cfg = ModelConfig {
            d_model: 16,
            d_hidden: 24,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 12,
            max_len: 16,
            dropout: 0.0,
        };
        Transformer::init(&cfg, &mut SeededRng::seed_from_u64(0)).unwrap()
    }

    fn batch() -> Batch {
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = vec![
            (vec![4, 5, 6], vec![6, 5, 4]),
            (vec![7, 8, 9, 10, 11], vec![11, 10, 9, 8, 7]),
        ];
        Batch::from_pairs(pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())))
    }

    #[test]
    fn schedule_branches() {
        let w = 4000;
        let at = lr_schedule(w, 512, w);
        let s = w as f64;
        assert!((s.powf(-0.5) - s * s.powf(-1.5)).abs() < 1e-15);
        assert!((at - 512f64.powf(-0.5) * s.powf(-0.5)).abs() < 1e-15);
        assert_eq!(lr_schedule(1, 512, w), 512f64.powf(-0.5) * (w as f64).powf(-1.5));
        assert!(lr_schedule(2 * w, 512, w) < at);
    }

    #[test]
    fn adam_moments_and_counter() {
        let (m, mut p) = tiny();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &p, 16);
        let before = p.clone();
        let grads: Vec<Option<Vec<f64>>> = p.tensors().iter().map(|t| Some(vec![1.0; t.numel()])).collect();
        let lr = opt.next_lr();
        opt.apply(&mut p, &grads).unwrap();
        assert_eq!(opt.step_count(), 1);
        // First Adam step moves every weight by lr · g/|g| (up to eps).
        for (a, b) in before.tensors().iter().zip(p.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y - lr).abs() < 1e-12);
            }
        }
        assert!(opt.apply(&mut p, &grads[..1]).is_err());
        let _ = m;
    }

    #[test]
    fn empty_batch_rejected() {
        let (m, mut p) = tiny();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &p, 16);
        let empty = Batch::from_pairs(std::iter::empty());
        let r = train_step(
            &m,
            &mut p,
            &mut opt,
            &empty,
            0,
            &CurriculumConfig::default(),
            &mut SeededRng::seed_from_u64(0),
            0.0,
        );
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn nan_loss_is_numeric_error() {
        let (m, mut p) = tiny();
        p.get_mut(0).data_mut().fill(f64::NAN);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &p, 16);
        let r = train_step(
            &m,
            &mut p,
            &mut opt,
            &batch(),
            3,
            &CurriculumConfig::default(),
            &mut SeededRng::seed_from_u64(0),
            0.0,
        );
        match r {
            Err(Error::Numeric { step, stage }) => {
                assert_eq!(step, 3);
                assert_eq!(stage, "at");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_steps_overfit_one_batch() {
        let (m, mut p) = tiny();
        let cfg = OptimizerConfig {
            fixed_lr: Some(1e-3),
            ..Default::default()
        };
        let mut opt = OptimizerState::new(cfg, &p, 16);
        let b = batch();
        let cur = CurriculumConfig::default();
        let mut rng = SeededRng::seed_from_u64(1);
        let losses: Vec<f64> = (0..10)
            .map(|_| train_step(&m, &mut p, &mut opt, &b, 0, &cur, &mut rng, 0.0).unwrap().loss)
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn future_targets_do_not_affect_earlier_at_positions() {
        // Per-position loss terms at t' ≤ t are unchanged when target tokens
        // after t are perturbed.
        let (m, p) = tiny();
        let src = vec![4usize, 5, 6, 7];
        let tgt = vec![8usize, 9, 10, 11, 4];
        let per_pos = |tgt: &[usize]| -> Vec<f64> {
            let b = Batch::from_pairs([(src.as_slice(), tgt)]);
            let enc = m.encode(&p, b.source(0)).unwrap();
            let y = b.target(0);
            let logits = m
                .decode(&p, &shift_right(y), &crate::model::build_mask(MaskKind::At, y.len()), &enc)
                .unwrap();
            (0..y.len())
                .map(|t| {
                    let row = crate::tensor::Tensor::new(vec![1, 12], logits.row(t).to_vec()).unwrap();
                    crate::tensor::cross_entropy(&row, &[y[t]], None).unwrap()
                })
                .collect()
        };
        let base = per_pos(&tgt);
        for t in 0..tgt.len() {
            let mut alt = tgt.clone();
            for v in alt.iter_mut().skip(t + 1) {
                *v = 4 + (*v + 3) % 8;
            }
            let got = per_pos(&alt);
            assert_eq!(&got[..=t], &base[..=t]);
        }
    }

    #[test]
    fn interpolation_identities_hold_through_the_update() {
        let (m, p0) = tiny();
        let b = batch();
        let cur = CurriculumConfig {
            at_steps: 0,
            cl_steps: 5,
            nat_steps: 0,
            pacing: PacingKind::Log,
            ..Default::default()
        };
        let pure_at = CurriculumConfig {
            at_steps: 10,
            cl_steps: 0,
            nat_steps: 0,
            ..cur.clone()
        };
        let pure_nat = CurriculumConfig {
            at_steps: 0,
            cl_steps: 0,
            nat_steps: 10,
            ..cur.clone()
        };
        for (cl_step, other) in [(0, &pure_at), (4, &pure_nat)] {
            let run = |cfg: &CurriculumConfig| {
                let mut p = p0.clone();
                let mut opt = OptimizerState::new(OptimizerConfig::default(), &p, 16);
                let rec = train_step(&m, &mut p, &mut opt, &b, cl_step, cfg, &mut SeededRng::seed_from_u64(9), 0.0)
                    .unwrap();
                (rec, p)
            };
            let (r1, p1) = run(&cur);
            let (r2, p2) = run(other);
            assert_eq!(r1.mask, r2.mask);
            assert_eq!(r1.loss.to_bits(), r2.loss.to_bits());
            assert_eq!(p1, p2);
        }
    }
}
