use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{distill_corpus, train_step, DistillReport, OptimizerConfig, OptimizerState, TrainRecord};
use crate::curriculum::{CurriculumConfig, SubstitutionLevel};
use crate::data::{Batch, ParallelCorpus};
use crate::error::{Error, Result};
use crate::eval::{bleu, BleuOptions};
use crate::inference::{at_greedy, candidate_lengths, nat_translate, NpdConfig};
use crate::model::{InferenceModel, ModelConfig, Transformer};
use crate::tensor::ParamSet;
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub curriculum: CurriculumConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub teacher_steps: usize,
    pub distill: bool,
    pub distill_beam: usize,
    pub log_every: usize,
    pub eval_every: usize,
    /// Validation pairs decoded at each evaluation.
    pub val_sentences: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            curriculum: CurriculumConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 16,
            label_smoothing: 0.0,
            teacher_steps: 4_000,
            distill: true,
            distill_beam: 4,
            log_every: 50,
            eval_every: 500,
            val_sentences: 200,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.curriculum.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.log_every == 0 || self.eval_every == 0 || self.distill_beam == 0 {
            return Err(Error::Config(
                "batch_size, log_every, eval_every and distill_beam must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Autoregressive teacher trained from scratch.
    Teacher,
    /// AT stage, curriculum, NAT stage, starting from the teacher.
    Fcl,
    /// As `Fcl` with the curriculum steps given to the NAT stage.
    DirectTransfer,
    /// NAT training from a random initialization for the whole budget.
    NatScratch,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Teacher => "teacher",
            Variant::Fcl => "fcl",
            Variant::DirectTransfer => "direct-transfer",
            Variant::NatScratch => "nat-scratch",
        }
    }

    /// Stage lengths this variant actually runs.
    pub fn curriculum(self, cfg: &TrainConfig) -> CurriculumConfig {
        let c = &cfg.curriculum;
        match self {
            Variant::Teacher => CurriculumConfig {
                at_steps: cfg.teacher_steps,
                cl_steps: 0,
                nat_steps: 0,
                ..c.clone()
            },
            Variant::Fcl => c.clone(),
            Variant::DirectTransfer => c.direct_transfer(),
            Variant::NatScratch => CurriculumConfig {
                at_steps: 0,
                cl_steps: 0,
                nat_steps: c.total_steps(),
                substitution: SubstitutionLevel::Token,
                ..c.clone()
            },
        }
    }
}

/// Deterministic shuffled batches: batch `s` depends only on the seed and
/// `s`, so a run can be cloned and continued.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    seed: u64,
    batch_size: usize,
    n: usize,
    epoch: Option<usize>,
    order: Vec<usize>,
}

impl EpochSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            seed,
            batch_size,
            n,
            epoch: None,
            order: Vec::new(),
        }
    }

    fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn batch(&mut self, step: usize, corpus: &ParallelCorpus) -> Result<Batch> {
        if corpus.len() != self.n || self.n == 0 {
            return Err(Error::Input(format!(
                "sampler built for {} pairs, corpus has {}",
                self.n,
                corpus.len()
            )));
        }
        let bpe = self.batches_per_epoch();
        let epoch = step / bpe;
        if self.epoch != Some(epoch) {
            let mut rng = SeededRng::seed_from_u64(mix(self.seed, epoch as u64));
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        let start = (step % bpe) * self.batch_size;
        let end = (start + self.batch_size).min(self.n);
        Ok(Batch::from_pairs(self.order[start..end].iter().map(|&i| {
            let (s, t) = &corpus.pairs[i];
            (s.as_slice(), t.as_slice())
        })))
    }
}

fn mix(seed: u64, x: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ x.wrapping_add(0xD1B5_4A32_D192_ED03).rotate_left(29)
}

/// How validation BLEU decodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    AtGreedy,
    /// One NAT pass with `floor(β·T_x)` content tokens.
    Nat { beta: f64 },
}

/// Corpus BLEU of `corpus.targets()` against the model's decodes of the
/// first `limit` sources.
pub fn evaluate_bleu(
    model: &Transformer,
    params: &ParamSet,
    corpus: &ParallelCorpus,
    mode: DecodeMode,
    limit: usize,
) -> Result<f64> {
    let im = InferenceModel::new(model, params);
    let n = corpus.len().min(limit);
    let max_content = model.config().max_len - 1;
    let mut hyps = Vec::with_capacity(n);
    for src in corpus.sources().take(n) {
        hyps.push(match mode {
            DecodeMode::AtGreedy => at_greedy(&im, src)?,
            DecodeMode::Nat { beta } => {
                let npd = NpdConfig {
                    beta,
                    half_window: 0,
                    normalize: true,
                };
                let len = candidate_lengths(src.len(), &npd, max_content)[0];
                nat_translate(&im, src, len)?
            }
        });
    }
    let refs: Vec<Vec<usize>> = corpus.targets().take(n).map(<[usize]>::to_vec).collect();
    bleu(&hyps, &refs, BleuOptions::default())
}

/// Parameters, optimizer and data position of a run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Transformer,
    pub params: ParamSet,
    pub opt: OptimizerState,
    pub curriculum: CurriculumConfig,
    pub step: usize,
    pub label_smoothing: f64,
    seed: u64,
    sampler: EpochSampler,
    /// Best validation score seen in the selection window, with its
    /// parameters and step count.
    pub best: Option<(f64, usize, ParamSet)>,
    pub records: Vec<TrainRecord>,
}

impl Trainer {
    pub fn new(
        model: Transformer,
        params: ParamSet,
        cfg: &TrainConfig,
        curriculum: CurriculumConfig,
        corpus_len: usize,
        seed: u64,
    ) -> Self {
        let opt = OptimizerState::new(cfg.optimizer, &params, model.config().d_model);
        Self {
            model,
            params,
            opt,
            curriculum,
            step: 0,
            label_smoothing: cfg.label_smoothing,
            seed,
            sampler: EpochSampler::new(corpus_len, cfg.batch_size, mix(seed, 1)),
            best: None,
            records: Vec::new(),
        }
    }

    /// Runs updates until `self.step == end`, evaluating every
    /// `eval_every` updates and at `end`. Evaluations at or after
    /// `select_from` updates compete for the best checkpoint.
    #[allow(clippy::too_many_arguments)]
    pub fn run_until(
        &mut self,
        end: usize,
        corpus: &ParallelCorpus,
        valid: Option<(&ParallelCorpus, DecodeMode)>,
        cfg: &TrainConfig,
        select_from: usize,
    ) -> Result<()> {
        while self.step < end {
            let batch = self.sampler.batch(self.step, corpus)?;
            let mut rng = SeededRng::seed_from_u64(mix(self.seed, 2 + self.step as u64));
            let mut rec = train_step(
                &self.model,
                &mut self.params,
                &mut self.opt,
                &batch,
                self.step,
                &self.curriculum,
                &mut rng,
                self.label_smoothing,
            )?;
            self.step += 1;
            let evaluate = self.step % cfg.eval_every == 0 || self.step == end;
            if let (true, Some((v, mode))) = (evaluate, valid) {
                let score = evaluate_bleu(&self.model, &self.params, v, mode, cfg.val_sentences)?;
                rec.val_bleu = Some(score);
                if self.step >= select_from && self.best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                    self.best = Some((score, self.step, self.params.clone()));
                }
            }
            if rec.step % cfg.log_every == 0 || rec.val_bleu.is_some() || self.step == end {
                log::debug!(
                    "step {} {} alpha={:.3} mask={} loss={:.4}",
                    rec.step,
                    rec.stage,
                    rec.alpha,
                    rec.mask,
                    rec.loss
                );
                self.records.push(rec);
            }
        }
        Ok(())
    }
}

/// Log CSV: `step,stage,alpha,mask,loss,val_bleu` (empty `val_bleu` when
/// no evaluation ran at that step).
pub fn records_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("step,stage,alpha,mask,loss,val_bleu\n");
    for r in records {
        let bleu = r.val_bleu.map(|b| format!("{b:.4}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{:.6},{}",
            r.step, r.stage, r.alpha, r.mask, r.loss, bleu
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: Transformer,
    pub final_params: ParamSet,
    /// Best validation checkpoint, or the final parameters when no
    /// validation set was given.
    pub best_params: ParamSet,
    pub best_val_bleu: Option<f64>,
    pub records: Vec<TrainRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub distill_report: Option<DistillReport>,
    /// The corpus the run trained on (distilled when distillation ran).
    pub train_corpus: ParallelCorpus,
    /// Target/source length ratio of the original training corpus.
    pub beta: f64,
}

/// Trains the autoregressive teacher for `cfg.teacher_steps` updates.
pub fn train_teacher(
    cfg: &TrainConfig,
    train: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    run_pipeline(cfg, Variant::Teacher, train, valid, None, out_dir)
}

/// Full pipeline for one variant: distillation by `teacher` (when
/// configured), then the AT, curriculum and NAT stages, saving a
/// checkpoint at each stage boundary under `out_dir/checkpoints/`.
pub fn run_pipeline(
    cfg: &TrainConfig,
    variant: Variant,
    train: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    teacher: Option<&ParamSet>,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    let mut init_rng = SeededRng::seed_from_u64(mix(cfg.seed, 0));
    let (model, fresh) = Transformer::init(&cfg.model, &mut init_rng)?;
    let teacher_params = match teacher {
        Some(p) => {
            Transformer::for_params(&cfg.model, p)?;
            Some(p)
        }
        None => None,
    };

    let (corpus, report) = if variant != Variant::Teacher && cfg.distill {
        let t = teacher_params
            .ok_or_else(|| Error::Config("distillation requested but no teacher checkpoint given".into()))?;
        let (c, r) = distill_corpus(&model, t, train, cfg.distill_beam)?;
        (c, Some(r))
    } else {
        (train.clone(), None)
    };
    // Length ratio of the real training data; distilled targets may be
    // slightly shorter on average.
    let beta = train.length_ratio();

    let init = match variant {
        Variant::Fcl | Variant::DirectTransfer => teacher_params.cloned().unwrap_or(fresh),
        Variant::Teacher | Variant::NatScratch => fresh,
    };
    let cur = variant.curriculum(cfg);
    let mut trainer = Trainer::new(model.clone(), init, cfg, cur.clone(), corpus.len(), cfg.seed);
    let mode = match variant {
        Variant::Teacher => DecodeMode::AtGreedy,
        _ => DecodeMode::Nat { beta },
    };
    let select_from = match variant {
        Variant::Teacher => 0,
        _ => cur.at_steps + cur.cl_steps,
    };
    let bounds = [
        ("at", cur.at_steps),
        ("curriculum", cur.at_steps + cur.cl_steps),
        ("nat", cur.total_steps()),
    ];
    let mut checkpoints = Vec::new();
    for (name, end) in bounds {
        trainer.run_until(end, &corpus, valid.map(|v| (v, mode)), cfg, select_from)?;
        if let Some(dir) = out_dir {
            let path = dir.join("checkpoints").join(format!("{name}.json"));
            trainer.params.save(&path)?;
            checkpoints.push(path);
        }
    }
    let (best_val_bleu, best_params) = match trainer.best.take() {
        Some((score, _, p)) => (Some(score), p),
        None => (None, trainer.params.clone()),
    };
    if let Some(dir) = out_dir {
        best_params.save(&dir.join("checkpoints").join("best.json"))?;
    }
    Ok(PipelineOutput {
        model,
        final_params: trainer.params,
        best_params,
        best_val_bleu,
        records: trainer.records,
        checkpoints,
        distill_report: report,
        train_corpus: corpus,
        beta,
    })
}
