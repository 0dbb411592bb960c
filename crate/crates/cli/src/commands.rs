use std::path::{Path, PathBuf};
use std::time::Instant;

use fclnat::data::{gen_corpus, load_corpus, save_corpus, ParallelCorpus, Vocab};
use fclnat::eval::{
    bleu, bleu_stats, corpus_mean_repetitions, diagnostics_csv, latency_benchmark, repetition_count, EvalReport,
    SentenceDiagnostics,
};
use fclnat::inference::{at_beam_decode, at_greedy, npd_decode, write_hypotheses};
use fclnat::model::{InferenceModel, Transformer};
use fclnat::tensor::ParamSet;
use fclnat::training::{records_csv, run_pipeline, Variant};
use fclnat::{Error, Result, SeededRng};
use rand::SeedableRng;

use crate::config::{require_file, write_text, PipelineConfig};

pub fn gen_data(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.task.validate()?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut written = Vec::new();
    for (split, n) in [
        ("train", cfg.data.train_pairs),
        ("valid", cfg.data.valid_pairs),
        ("test", cfg.data.test_pairs),
    ] {
        let corpus = gen_corpus(&cfg.task, n, &mut rng)?;
        let path = cfg.corpus_path(split);
        save_corpus(&corpus, &path)?;
        written.push(path);
    }
    let vocab_path = cfg.vocab_path();
    cfg.task.vocab().save(&vocab_path)?;
    written.push(vocab_path);
    Ok(written)
}

fn load_split(cfg: &PipelineConfig, vocab: &Vocab, split: &str) -> Result<ParallelCorpus> {
    let path = cfg.corpus_path(split);
    require_file(&path, &format!("{split} corpus"))?;
    load_corpus(&path, vocab)
}

fn load_vocab(cfg: &PipelineConfig) -> Result<Vocab> {
    let path = cfg.vocab_path();
    require_file(&path, "vocabulary")?;
    Vocab::load(&path)
}

fn load_params(cfg: &PipelineConfig, path: &Path, what: &str) -> Result<(Transformer, ParamSet)> {
    require_file(path, what)?;
    let params = ParamSet::load(path)?;
    let model = Transformer::for_params(&cfg.train.model, &params)?;
    Ok((model, params))
}

pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub best_val_bleu: Option<f64>,
}

pub fn train(cfg: &PipelineConfig, variant: Variant) -> Result<TrainSummary> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let train = load_split(cfg, &vocab, "train")?;
    let valid = load_split(cfg, &vocab, "valid")?;
    let tc = cfg.train_config();
    let needs_teacher = variant != Variant::Teacher && tc.distill;
    let teacher = match (&cfg.paths.teacher_checkpoint, needs_teacher) {
        (Some(p), true) => Some(load_params(cfg, p, "teacher checkpoint")?.1),
        (None, true) => {
            return Err(Error::Config(format!(
                "paths.teacher_checkpoint is required for --mode {} with distillation",
                variant.name()
            )))
        }
        _ => None,
    };
    let run = &cfg.paths.run_dir;
    cfg.save(&run.join("config.json"))?;
    let out = run_pipeline(&tc, variant, &train, Some(&valid), teacher.as_ref(), Some(run))?;
    let log = run.join("logs").join("train.csv");
    write_text(&log, &records_csv(&out.records))?;
    if let Some(report) = &out.distill_report {
        write_text(&run.join("reports").join("distill.txt"), &report.to_text())?;
    }
    Ok(TrainSummary {
        checkpoints: out.checkpoints,
        log,
        best_val_bleu: out.best_val_bleu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeKind {
    /// Noisy parallel decoding with the configured half-window.
    Nat,
    /// Autoregressive beam search (beam 1 is greedy).
    At { beam: usize },
}

pub fn eval(cfg: &PipelineConfig, checkpoint: &Path, decode: DecodeKind) -> Result<EvalReport> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let test = load_split(cfg, &vocab, "test")?;
    let (model, params) = load_params(cfg, checkpoint, "checkpoint")?;
    let teacher = match &cfg.paths.teacher_checkpoint {
        Some(p) => Some(load_params(cfg, p, "teacher checkpoint")?),
        None => None,
    };
    if decode == DecodeKind::Nat && cfg.npd.half_window >= 1 && teacher.is_none() {
        return Err(Error::Config(
            "npd.half_window ≥ 1 needs paths.teacher_checkpoint to score candidates".into(),
        ));
    }
    let mut npd = cfg.npd;
    if decode == DecodeKind::Nat {
        // Length ratio of the training set, as the data was generated.
        npd.beta = load_split(cfg, &vocab, "train")?.length_ratio();
    }
    let student = InferenceModel::new(&model, &params);
    let teacher_im = teacher.as_ref().map(|(m, p)| InferenceModel::new(m, p));
    let translate = |src: &[usize]| -> Result<Vec<usize>> {
        match decode {
            DecodeKind::Nat => Ok(npd_decode(&student, teacher_im.as_ref(), src, &npd)?.hypothesis),
            DecodeKind::At { beam: 1 } => at_greedy(&student, src),
            DecodeKind::At { beam } => at_beam_decode(&student, src, beam),
        }
    };

    let mut hyps = Vec::with_capacity(test.len());
    let mut times = Vec::with_capacity(test.len());
    for src in test.sources() {
        let t = Instant::now();
        hyps.push(translate(src)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let refs: Vec<Vec<usize>> = test.targets().map(<[usize]>::to_vec).collect();
    let opts = cfg.eval.bleu_options();
    let score = bleu(&hyps, &refs, opts)?;

    let sources: Vec<Vec<usize>> = test.sources().map(<[usize]>::to_vec).collect();
    let warmup = cfg.eval.latency_warmup_runs;
    let latency = latency_benchmark(|s| translate(s), &sources, warmup)?;
    // AT reference: the teacher when available, else this network decoded
    // autoregressively (same architecture, same cost per step).
    let at_model = teacher_im.as_ref().unwrap_or(&student);
    let at_latency = latency_benchmark(|s| at_greedy(at_model, s), &sources, warmup)?;

    let report = EvalReport::new(score, corpus_mean_repetitions(&hyps), latency, at_latency);
    let mut rows = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
        let contrib = bleu_stats(std::slice::from_ref(h), std::slice::from_ref(r), opts.max_n)?.score(opts.smoothing);
        rows.push(SentenceDiagnostics {
            id: i,
            len: h.len(),
            bleu_contrib: contrib,
            repetitions: repetition_count(h),
            latency_ms: times[i],
        });
    }
    let reports = cfg.paths.run_dir.join("reports");
    write_hypotheses(&reports.join("hypotheses.txt"), &hyps, &vocab)?;
    write_text(&reports.join("eval.json"), &report.to_json())?;
    write_text(&reports.join("eval.txt"), &report.to_table())?;
    write_text(&reports.join("diagnostics.csv"), &diagnostics_csv(&rows))?;
    Ok(report)
}
