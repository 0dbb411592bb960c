//! Acceptance run: every criterion at its stated tolerance, one result line
//! per criterion. Exits nonzero when any criterion fails.
//!
//! `FCLNAT_ACCEPTANCE_QUICK=1` shrinks the end-to-end experiments (fewer
//! pairs and steps) for a fast smoke run; the verdicts of criteria 8–11 are
//! only meaningful at full size.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use fclnat::curriculum::{
    pacing_value, sample_substitution_mask, select_mask_kind, CurriculumConfig, MaskLatch, PacingKind, PacingSpec,
    Stage, SubstitutionLevel,
};
use fclnat::data::{gen_corpus, ParallelCorpus, SyntheticTaskSpec};
use fclnat::eval::{bleu, corpus_mean_repetitions, latency_benchmark, BleuOptions, Smoothing};
use fclnat::inference::{
    at_greedy, candidate_lengths, nat_translate, npd_decode, teacher_score_normalized, NpdConfig,
};
use fclnat::model::{build_mask, InferenceModel, ModelConfig, Transformer};
use fclnat::tensor::{MaskKind, ParamSet};
use fclnat::training::{
    distill_corpus, evaluate_bleu, train_step, train_teacher, DecodeMode, OptimizerConfig, OptimizerState,
    TrainConfig, Trainer,
};
use fclnat::SeededRng;
use rand::{Rng, SeedableRng};

type Verdict = (bool, String);

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig {
        n_layers: 2,
        ..tiny_config()
    };
    let (model, params) = Transformer::init(&cfg, &mut SeededRng::seed_from_u64(5)).unwrap();
    let batch = random_batch(&mut SeededRng::seed_from_u64(6), 3, cfg.vocab_size, 6);
    let cur = CurriculumConfig {
        at_steps: 0,
        cl_steps: 10,
        nat_steps: 0,
        ..Default::default()
    };
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for (stage, smoothing) in [(Stage::AtTrain, 0.0), (Stage::NatTrain, 0.1), (Stage::Curriculum(4), 0.0)] {
        let (inputs, mask) = inputs_for(&batch, stage, &cur, 7);
        let r = gradient_check(&model, &params, &batch, &inputs, mask, smoothing);
        checked += r.checked;
        if r.worst >= worst.0 {
            worst = (r.worst, r.worst_param);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst.0 < 1e-3 && secs < 60.0,
        format!(
            "{checked} entries, worst relative error {:.2e} at {}, {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

fn c2_interpolation() -> Verdict {
    let cfg = ModelConfig {
        d_model: 16,
        d_hidden: 24,
        n_layers: 2,
        n_heads: 2,
        vocab_size: 14,
        max_len: 12,
        dropout: 0.1,
    };
    let (model, p0) = Transformer::init(&cfg, &mut SeededRng::seed_from_u64(1)).unwrap();
    let i_cl = 50;
    let cur = CurriculumConfig {
        at_steps: 0,
        cl_steps: i_cl,
        nat_steps: 0,
        pacing: PacingKind::Log,
        ..Default::default()
    };
    let only = |at: usize, nat: usize| CurriculumConfig {
        at_steps: at,
        cl_steps: 0,
        nat_steps: nat,
        ..cur.clone()
    };
    let (pure_at, pure_nat) = (only(i_cl, 0), only(0, i_cl));
    let mut worst: f64 = 0.0;
    let mut masks_ok = true;
    for seed in 0..100u64 {
        let batch = random_batch(&mut SeededRng::seed_from_u64(1000 + seed), 4, cfg.vocab_size, 9);
        for (step, reference, kind) in [(0, &pure_at, MaskKind::At), (i_cl - 1, &pure_nat, MaskKind::Nat)] {
            let run = |c: &CurriculumConfig| {
                let mut p = p0.clone();
                let mut opt = OptimizerState::new(OptimizerConfig::default(), &p, cfg.d_model);
                let mut rng = SeededRng::seed_from_u64(seed);
                let rec = train_step(&model, &mut p, &mut opt, &batch, step, c, &mut rng, 0.1).unwrap();
                (rec, p)
            };
            let (r1, p1) = run(&cur);
            let (r2, p2) = run(reference);
            masks_ok &= r1.mask == kind && r2.mask == kind;
            worst = worst.max((r1.loss - r2.loss).abs());
            for (a, b) in p1.tensors().iter().zip(p2.tensors()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    (
        masks_ok && worst <= 1e-12,
        format!("100 batches x 2 identities, max |loss or parameter difference| = {worst:.1e}"),
    )
}

fn c3_causality() -> Verdict {
    let cfg = ModelConfig {
        d_model: 16,
        d_hidden: 24,
        n_layers: 2,
        n_heads: 4,
        vocab_size: 20,
        max_len: 16,
        dropout: 0.0,
    };
    let (model, params) = Transformer::init(&cfg, &mut SeededRng::seed_from_u64(3)).unwrap();
    let mut rng = SeededRng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..200 {
        let src: Vec<usize> = (0..rng.gen_range(1..=16)).map(|_| rng.gen_range(0..20)).collect();
        let len = rng.gen_range(2..=16);
        let dec: Vec<usize> = (0..len).map(|_| rng.gen_range(0..20)).collect();
        let t = rng.gen_range(0..len - 1);
        let mut perturbed = dec.clone();
        for tok in perturbed.iter_mut().skip(t + 1) {
            *tok = (*tok + rng.gen_range(1..20)) % 20;
        }
        let enc = model.encode(&params, &src).unwrap();
        let mask = build_mask(MaskKind::At, len);
        let a = model.decode(&params, &dec, &mask, &enc).unwrap();
        let b = model.decode(&params, &perturbed, &mask, &enc).unwrap();
        let v = cfg.vocab_size;
        if a.data()[..(t + 1) * v] != b.data()[..(t + 1) * v] {
            violations += 1;
        }
    }
    (violations == 0, format!("200 probes, {violations} with any change at positions <= t"))
}

fn pacing_checks(total: usize, indices: &[usize]) -> Result<(), String> {
    let k = 10.min(total);
    for kind in [PacingKind::Ladder, PacingKind::Linear, PacingKind::Log] {
        let spec = PacingSpec::new(kind, total, k).unwrap();
        let mut prev = f64::NEG_INFINITY;
        let mut plateaus = 0;
        for &i in indices {
            let a = pacing_value(&spec, i).unwrap();
            if a < prev {
                return Err(format!("{kind} decreases at i={i} for I={total}"));
            }
            if a != prev {
                plateaus += 1;
            }
            prev = a;
        }
        let last = pacing_value(&spec, total - 1).unwrap();
        match kind {
            PacingKind::Log if pacing_value(&spec, 0).unwrap() != 0.0 || last != 1.0 => {
                return Err(format!("log endpoints wrong for I={total}"))
            }
            PacingKind::Linear if last != 1.0 => return Err(format!("linear(I-1) != 1 for I={total}")),
            PacingKind::Ladder if plateaus != k => {
                return Err(format!("ladder has {plateaus} plateaus, expected {k}, for I={total}"))
            }
            _ => {}
        }
    }
    Ok(())
}

fn c4_pacing() -> Verdict {
    let mut notes = Vec::new();
    for total in [10usize, 1_000, 1_000_000] {
        let indices: Vec<usize> = if total <= 1_000 {
            (0..total).collect()
        } else {
            let mut rng = SeededRng::seed_from_u64(total as u64);
            let mut idx: Vec<usize> = (0..200_000).map(|_| rng.gen_range(0..total)).collect();
            idx.extend([0, 1, total - 2, total - 1]);
            idx.sort_unstable();
            idx.dedup();
            idx
        };
        if let Err(e) = pacing_checks(total, &indices) {
            return (false, e);
        }
        notes.push(format!("I={total}: {} points", indices.len()));
    }
    (true, notes.join(", "))
}

fn c5_substitution() -> Verdict {
    let mut rng = SeededRng::seed_from_u64(55);
    for _ in 0..10_000 {
        let alpha: f64 = rng.gen();
        let len = rng.gen_range(1..=64);
        let m = sample_substitution_mask(alpha, len, &mut rng);
        let want = (alpha * len as f64).floor() as usize;
        if m.count() != want {
            return (false, format!("alpha={alpha} T={len}: {} selected, expected {want}", m.count()));
        }
    }
    let mut hits = [0usize; 10];
    for _ in 0..10_000 {
        let m = sample_substitution_mask(0.5, 10, &mut rng);
        if m.count() != 5 {
            return (false, "alpha=0.5, T=10 did not select exactly 5".into());
        }
        for (h, &b) in hits.iter_mut().zip(m.bits()) {
            *h += b as usize;
        }
    }
    let worst = hits
        .iter()
        .map(|&h| (h as f64 / 10_000.0 - 0.5).abs())
        .fold(0.0, f64::max);
    (
        worst <= 0.02,
        format!("exact counts on 10^4 random draws; worst per-position deviation {worst:.4}"),
    )
}

fn c6_mask_switch() -> Verdict {
    let mut trajectories: Vec<Vec<f64>> = Vec::new();
    for total in [2usize, 10, 100, 4_000] {
        for kind in [PacingKind::Ladder, PacingKind::Linear, PacingKind::Log] {
            let spec = PacingSpec::new(kind, total, 10.min(total)).unwrap();
            trajectories.push((0..total).map(|i| pacing_value(&spec, i).unwrap()).collect());
        }
    }
    let mut rng = SeededRng::seed_from_u64(66);
    for _ in 0..1_000 {
        let n = rng.gen_range(2..200);
        let mut t: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        t.sort_by(f64::total_cmp);
        t[0] = 0.0;
        t[n - 1] = 1.0;
        trajectories.push(t);
    }
    for t in &trajectories {
        let kinds: Vec<MaskKind> = t.iter().map(|&a| select_mask_kind(a, 0.6)).collect();
        let flips = kinds.windows(2).filter(|w| w[0] != w[1]).count();
        let mut latch = MaskLatch::default();
        let latched = kinds.iter().enumerate().all(|(i, &k)| latch.observe(i, k).is_ok());
        if flips != 1 || kinds[0] != MaskKind::At || !latched {
            return (false, format!("trajectory of length {} flips {flips} times", t.len()));
        }
    }
    (true, format!("{} monotone trajectories, each flips AT→NAT exactly once", trajectories.len()))
}

fn c7_npd() -> Verdict {
    let npd = |b: usize| NpdConfig {
        beta: 1.1,
        half_window: b,
        normalize: true,
    };
    let lengths = candidate_lengths(10, &npd(4), 63);
    if lengths != (7..=15).collect::<Vec<_>>() {
        return (false, format!("candidate lengths {lengths:?}"));
    }
    let cfg = ModelConfig {
        d_model: 16,
        d_hidden: 32,
        n_layers: 2,
        n_heads: 4,
        vocab_size: 20,
        max_len: 24,
        dropout: 0.0,
    };
    let (sm, sp) = Transformer::init(&cfg, &mut SeededRng::seed_from_u64(70)).unwrap();
    let (tm, tp) = Transformer::init(&cfg, &mut SeededRng::seed_from_u64(71)).unwrap();
    let student = InferenceModel::new(&sm, &sp);
    let teacher = InferenceModel::new(&tm, &tp);
    let mut rng = SeededRng::seed_from_u64(72);
    for _ in 0..50 {
        let src: Vec<usize> = (0..10).map(|_| rng.gen_range(4..20)).collect();
        student.reset_counter();
        let out = npd_decode(&student, Some(&teacher), &src, &npd(4)).unwrap();
        if out.candidates.len() != 9 || student.decoder_forwards() != 9 {
            return (false, "expected 9 candidates from 9 decoder passes".into());
        }
        let scores: Vec<f64> = out
            .candidates
            .iter()
            .map(|c| teacher_score_normalized(&teacher, &src, &fclnat::data::with_eos(&c.hypothesis())).unwrap())
            .collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmax = scores.iter().position(|&s| s == best).unwrap();
        if out.chosen != argmax || out.hypothesis != out.candidates[argmax].hypothesis() {
            return (false, "npd_decode did not return the teacher-score argmax".into());
        }
        let b0 = npd_decode(&student, None, &src, &npd(0)).unwrap();
        if b0.hypothesis != nat_translate(&student, &src, 11).unwrap() {
            return (false, "B=0 differs from nat_decode".into());
        }
    }
    (true, "lengths 7..15; argmax and B=0 identities on 50 sources".into())
}

fn oracle_bleu(hyps: &[Vec<u32>], refs: &[Vec<u32>], smooth: bool) -> f64 {
    let max_n = 4;
    let (mut matched, mut total) = (vec![0usize; max_n], vec![0usize; max_n]);
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            let grams = |s: &Vec<u32>| -> Vec<Vec<u32>> {
                (0..s.len().saturating_sub(n - 1)).map(|i| s[i..i + n].to_vec()).collect()
            };
            let mut pool = grams(rf);
            for g in grams(h) {
                total[n - 1] += 1;
                if let Some(k) = pool.iter().position(|x| *x == g) {
                    pool.swap_remove(k);
                    matched[n - 1] += 1;
                }
            }
        }
    }
    if c == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..max_n {
        let p = match (matched[n], smooth && n > 0) {
            (0, true) => 1.0 / (total[n] + 1) as f64,
            (0, false) => return 0.0,
            (m, _) => m as f64 / total[n] as f64,
        };
        log_p += p.ln();
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (log_p / max_n as f64).exp()
}

fn c12_bleu_oracle() -> Verdict {
    let mut rng = SeededRng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let n = rng.gen_range(1..6);
        let vocab = rng.gen_range(2..8);
        let sent = |rng: &mut SeededRng| -> Vec<u32> { (0..rng.gen_range(0..15)).map(|_| rng.gen_range(0..vocab)).collect() };
        let refs: Vec<Vec<u32>> = (0..n).map(|_| sent(&mut rng)).collect();
        let hyps: Vec<Vec<u32>> = (0..n).map(|_| sent(&mut rng)).collect();
        for (smoothing, smooth) in [(Smoothing::AddOne, true), (Smoothing::None, false)] {
            let got = bleu(&hyps, &refs, BleuOptions { max_n: 4, smoothing }).unwrap();
            worst = worst.max((got - oracle_bleu(&hyps, &refs, smooth)).abs());
        }
    }
    (worst <= 1e-9, format!("1000 random corpora x 2 smoothing modes, max |diff| = {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// End-to-end experiments (criteria 8–11)

#[derive(Clone)]
struct E2eSettings {
    pairs: usize,
    valid: usize,
    test: usize,
    budget: (usize, usize, usize),
    teacher_steps: usize,
}

fn e2e_train_config(s: &E2eSettings, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            d_model: 16,
            d_hidden: 32,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 52,
            max_len: 64,
            dropout: 0.0,
        },
        curriculum: CurriculumConfig {
            at_steps: s.budget.0,
            cl_steps: s.budget.1,
            nat_steps: s.budget.2,
            pacing: PacingKind::Log,
            ..Default::default()
        },
        optimizer: OptimizerConfig::default(),
        batch_size: 16,
        label_smoothing: 0.1,
        teacher_steps: s.teacher_steps,
        distill: true,
        distill_beam: 4,
        log_every: 100,
        eval_every: 500,
        val_sentences: s.valid,
        seed,
    }
}

struct SeedRun {
    bleu: BTreeMap<&'static str, f64>,
    reps: BTreeMap<&'static str, f64>,
    model: Transformer,
    teacher: ParamSet,
    student: ParamSet,
    beta: f64,
    minutes: f64,
}

fn run_seed(s: &E2eSettings, seed: u64) -> SeedRun {
    let start = Instant::now();
    let task = SyntheticTaskSpec::default();
    let mut rng = SeededRng::seed_from_u64(seed);
    let train = gen_corpus(&task, s.pairs, &mut rng).unwrap();
    let valid = gen_corpus(&task, s.valid, &mut rng).unwrap();
    let test = gen_corpus(&task, s.test, &mut rng).unwrap();
    let cfg = e2e_train_config(s, seed);

    let teacher = train_teacher(&cfg, &train, Some(&valid), None).unwrap();
    let (distilled, _) = distill_corpus(&teacher.model, &teacher.best_params, &train, cfg.distill_beam).unwrap();
    let beta = train.length_ratio();
    let mode = DecodeMode::Nat { beta };
    let c = &cfg.curriculum;
    let variants: Vec<(&'static str, CurriculumConfig)> = vec![
        ("fcl-log", c.clone()),
        (
            "fcl-linear",
            CurriculumConfig {
                pacing: PacingKind::Linear,
                ..c.clone()
            },
        ),
        (
            "fcl-sentence",
            CurriculumConfig {
                substitution: SubstitutionLevel::Sentence,
                ..c.clone()
            },
        ),
        ("direct-transfer", c.direct_transfer()),
    ];

    // The AT stage is identical across variants, so it runs once.
    let mut shared = Trainer::new(
        teacher.model.clone(),
        teacher.best_params.clone(),
        &cfg,
        c.clone(),
        distilled.len(),
        seed,
    );
    shared.run_until(c.at_steps, &distilled, None, &cfg, usize::MAX).unwrap();

    let finish = |mut tr: Trainer, cur: &CurriculumConfig| -> ParamSet {
        tr.curriculum = cur.clone();
        let select_from = cur.at_steps + cur.cl_steps;
        tr.run_until(cur.total_steps(), &distilled, Some((&valid, mode)), &cfg, select_from)
            .unwrap();
        tr.best.map(|(_, _, p)| p).unwrap_or(tr.params)
    };
    let mut trained: Vec<(&'static str, ParamSet)> = Vec::new();
    for (name, cur) in &variants {
        trained.push((name, finish(shared.clone(), cur)));
    }
    let scratch_cur = CurriculumConfig {
        at_steps: 0,
        cl_steps: 0,
        nat_steps: c.total_steps(),
        ..c.clone()
    };
    let (_, fresh) = Transformer::init(&cfg.model, &mut SeededRng::seed_from_u64(seed ^ 0xABCD)).unwrap();
    let scratch = Trainer::new(teacher.model.clone(), fresh, &cfg, scratch_cur.clone(), distilled.len(), seed);
    trained.push(("nat-scratch", finish(scratch, &scratch_cur)));

    let mut bleu_by = BTreeMap::new();
    let mut reps_by = BTreeMap::new();
    for (name, params) in &trained {
        let im = InferenceModel::new(&teacher.model, params);
        let max_content = cfg.model.max_len - 1;
        let npd = NpdConfig {
            beta,
            half_window: 0,
            normalize: true,
        };
        let hyps: Vec<Vec<usize>> = test
            .sources()
            .map(|src| nat_translate(&im, src, candidate_lengths(src.len(), &npd, max_content)[0]).unwrap())
            .collect();
        let refs: Vec<Vec<usize>> = test.targets().map(<[usize]>::to_vec).collect();
        bleu_by.insert(*name, bleu(&hyps, &refs, BleuOptions::default()).unwrap());
        reps_by.insert(*name, corpus_mean_repetitions(&hyps));
        debug_assert_eq!(
            bleu_by[name],
            evaluate_bleu(&teacher.model, params, &test, mode, test.len()).unwrap()
        );
    }
    let student = trained.remove(0).1;
    SeedRun {
        bleu: bleu_by,
        reps: reps_by,
        model: teacher.model,
        teacher: teacher.best_params,
        student,
        beta,
        minutes: start.elapsed().as_secs_f64() / 60.0,
    }
}

fn run_seeds(s: &E2eSettings, seeds: &[u64]) -> Vec<SeedRun> {
    // Seeds are independent; threads use extra cores when present.
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds.iter().map(|&seed| scope.spawn(move || run_seed(s, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("seed run panicked")).collect()
    })
}

fn mean(runs: &[SeedRun], f: impl Fn(&SeedRun) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn c8_curriculum(runs: &[SeedRun], rerun: Option<&[SeedRun]>) -> Verdict {
    let verdict = |runs: &[SeedRun]| {
        let fcl = mean(runs, |r| r.bleu["fcl-log"]);
        let dt = mean(runs, |r| r.bleu["direct-transfer"]);
        let log_wins = runs.iter().filter(|r| r.bleu["fcl-log"] >= r.bleu["fcl-linear"]).count();
        let per_seed: Vec<String> = runs
            .iter()
            .map(|r| {
                format!(
                    "log {:.2} / linear {:.2} / DT {:.2}",
                    r.bleu["fcl-log"], r.bleu["fcl-linear"], r.bleu["direct-transfer"]
                )
            })
            .collect();
        (
            fcl - dt > 0.0 && log_wins >= 2,
            format!(
                "mean FCL-log {fcl:.2} vs DT {dt:.2}; log >= linear on {log_wins}/3 seeds [{}]",
                per_seed.join("; ")
            ),
        )
    };
    let (ok, detail) = verdict(runs);
    match rerun {
        Some(r2) => {
            let (ok2, detail2) = verdict(r2);
            (ok2, format!("{detail}; at 2x budget: {detail2}"))
        }
        None => (ok, detail),
    }
}

fn c9_token_vs_sentence(runs: &[SeedRun]) -> Verdict {
    let token = mean(runs, |r| r.bleu["fcl-log"]);
    let sentence = mean(runs, |r| r.bleu["fcl-sentence"]);
    (
        token >= sentence,
        format!("mean BLEU token-level {token:.2} vs sentence-level {sentence:.2}"),
    )
}

fn c10_repetitions(runs: &[SeedRun]) -> Verdict {
    let fcl = mean(runs, |r| r.reps["fcl-log"]);
    let scratch = mean(runs, |r| r.reps["nat-scratch"]);
    (
        fcl <= scratch,
        format!("mean repetitions/sentence FCL {fcl:.3} vs NAT-from-scratch {scratch:.3}"),
    )
}

fn c11_speedup(run: &SeedRun) -> Verdict {
    let task = SyntheticTaskSpec {
        min_len: 32,
        max_len: 40,
        ..Default::default()
    };
    let long: ParallelCorpus = gen_corpus(&task, 50, &mut SeededRng::seed_from_u64(111)).unwrap();
    let sources: Vec<Vec<usize>> = long.sources().map(<[usize]>::to_vec).collect();
    let student = InferenceModel::new(&run.model, &run.student);
    let teacher = InferenceModel::new(&run.model, &run.teacher);
    let npd = NpdConfig {
        beta: run.beta,
        half_window: 0,
        normalize: true,
    };

    // Pass counts.
    let mut counts_ok = true;
    for src in &sources {
        student.reset_counter();
        npd_decode(&student, None, src, &npd).unwrap();
        counts_ok &= student.decoder_forwards() == 1;
        teacher.reset_counter();
        let out = at_greedy(&teacher, src).unwrap();
        let cap = run.model.config().max_len - 1;
        let t_y = if out.len() == cap { cap } else { out.len() + 1 };
        counts_ok &= teacher.decoder_forwards() == t_y;
    }
    let nat_ms = latency_benchmark(|s| npd_decode(&student, None, s, &npd).unwrap(), &sources, 5).unwrap();
    let at_ms = latency_benchmark(|s| at_greedy(&teacher, s).unwrap(), &sources, 5).unwrap();
    (
        counts_ok && nat_ms < at_ms,
        format!(
            "NAT {nat_ms:.3} ms vs AT greedy {at_ms:.3} ms per sentence ({:.1}x); pass counts {}",
            at_ms / nat_ms,
            if counts_ok { "1 vs T_y" } else { "WRONG" }
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    }
}

fn report(id: u32, name: &str, v: &Verdict, failures: &mut Vec<u32>) {
    let tag = if v.0 { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2} {name}: {}", v.1);
    if !v.0 {
        failures.push(id);
    }
}

fn main() {
    let quick = std::env::var("FCLNAT_ACCEPTANCE_QUICK").is_ok_and(|v| v != "0");
    let mut failures = Vec::new();
    let start = Instant::now();

    report(1, "gradient correctness", &guarded(c1_gradients), &mut failures);
    report(2, "interpolation identities", &guarded(c2_interpolation), &mut failures);
    report(3, "causality", &guarded(c3_causality), &mut failures);
    report(4, "pacing functions", &guarded(c4_pacing), &mut failures);
    report(5, "substitution exactness", &guarded(c5_substitution), &mut failures);
    report(6, "mask switch", &guarded(c6_mask_switch), &mut failures);
    report(7, "NPD structure", &guarded(c7_npd), &mut failures);

    let settings = if quick {
        E2eSettings {
            pairs: 2_000,
            valid: 100,
            test: 100,
            budget: (100, 400, 500),
            teacher_steps: 500,
        }
    } else {
        E2eSettings {
            pairs: 20_000,
            valid: 200,
            test: 500,
            budget: (1_000, 4_000, 5_000),
            teacher_steps: 3_000,
        }
    };
    let seeds = [1u64, 2, 3];
    let runs = catch_unwind(AssertUnwindSafe(|| run_seeds(&settings, &seeds)));
    match runs {
        Ok(runs) => {
            for r in &runs {
                println!(
                    "  e2e seed run ({:.1} min): BLEU {:?} repetitions {:?}",
                    r.minutes, r.bleu, r.reps
                );
            }
            let first = guarded(|| c8_curriculum(&runs, None));
            let c8 = if first.0 {
                first
            } else {
                // Re-examined at twice the budget before failing.
                let doubled = E2eSettings {
                    budget: (2 * settings.budget.0, 2 * settings.budget.1, 2 * settings.budget.2),
                    ..settings.clone()
                };
                let rerun = run_seeds(&doubled, &seeds);
                guarded(|| c8_curriculum(&runs, Some(&rerun)))
            };
            report(8, "end-to-end curriculum benefit", &c8, &mut failures);
            report(9, "token vs sentence substitution", &guarded(|| c9_token_vs_sentence(&runs)), &mut failures);
            report(10, "repetition direction", &guarded(|| c10_repetitions(&runs)), &mut failures);
            report(11, "speedup direction", &guarded(|| c11_speedup(&runs[0])), &mut failures);
        }
        Err(_) => {
            for (id, name) in [
                (8, "end-to-end curriculum benefit"),
                (9, "token vs sentence substitution"),
                (10, "repetition direction"),
                (11, "speedup direction"),
            ] {
                report(id, name, &(false, "end-to-end runs panicked".into()), &mut failures);
            }
        }
    }
    report(12, "BLEU oracle equivalence", &guarded(c12_bleu_oracle), &mut failures);

    println!(
        "acceptance: {}/12 passed in {:.1} min{}",
        12 - failures.len(),
        start.elapsed().as_secs_f64() / 60.0,
        if quick { " (quick mode)" } else { "" }
    );
    if !failures.is_empty() {
        std::process::exit(1);
    }
}
