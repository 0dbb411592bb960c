//! Shared helpers for integration tests.

#![allow(dead_code)]

use fclnat::curriculum::{CurriculumConfig, Stage};
use fclnat::data::Batch;
use fclnat::model::{ModelConfig, Transformer};
use fclnat::tensor::{MaskKind, ParamSet};
use fclnat::training::{batch_loss, stage_inputs};
use fclnat::SeededRng;
use rand::{Rng, SeedableRng};

pub const FD_EPS: f64 = 1e-5;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_hidden: 12,
        n_layers: 1,
        n_heads: 2,
        vocab_size: 10,
        max_len: 10,
        dropout: 0.0,
    }
}

pub fn random_batch(rng: &mut SeededRng, n: usize, vocab: usize, max_len: usize) -> Batch {
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..n)
        .map(|_| {
            let ls = rng.gen_range(1..max_len);
            let lt = rng.gen_range(1..max_len);
            let s = (0..ls).map(|_| rng.gen_range(4..vocab)).collect();
            let t = (0..lt).map(|_| rng.gen_range(4..vocab)).collect();
            (s, t)
        })
        .collect();
    Batch::from_pairs(pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())))
}

/// Central finite difference of `f` with respect to parameter `(tensor, index)`.
pub fn central_difference(params: &ParamSet, tensor: usize, index: usize, f: &dyn Fn(&ParamSet) -> f64) -> f64 {
    let mut p = params.clone();
    let x = p.get(tensor).data()[index];
    p.get_mut(tensor).data_mut()[index] = x + FD_EPS;
    let up = f(&p);
    p.get_mut(tensor).data_mut()[index] = x - FD_EPS;
    let down = f(&p);
    (up - down) / (2.0 * FD_EPS)
}

/// `|a - n| / max(|a|, |n|)`, with differences below `abs_floor` treated
/// as agreement (both sides at round-off level).
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < abs_floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_param: String,
}

/// Compares analytic gradients of the mean token loss against central
/// differences for every entry of every parameter tensor.
pub fn gradient_check(
    model: &Transformer,
    params: &ParamSet,
    batch: &Batch,
    inputs: &[Vec<usize>],
    mask: MaskKind,
    smoothing: f64,
) -> GradReport {
    let (_, grads) = batch_loss(model, params, batch, inputs, mask, smoothing, None, true).unwrap();
    let f = |p: &ParamSet| batch_loss(model, p, batch, inputs, mask, smoothing, None, false).unwrap().0;
    let mut report = GradReport {
        checked: 0,
        worst: 0.0,
        worst_param: String::new(),
    };
    for t in 0..params.len() {
        let g = grads[t].clone().unwrap_or_else(|| vec![0.0; params.get(t).numel()]);
        for (i, &a) in g.iter().enumerate() {
            let n = central_difference(params, t, i, &f);
            let e = relative_error(a, n, 1e-10);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_param = format!("{}[{i}]", params.name(t));
            }
        }
    }
    report
}

/// Decoder inputs for `stage` drawn with a fixed seed.
pub fn inputs_for(batch: &Batch, stage: Stage, cfg: &CurriculumConfig, seed: u64) -> (Vec<Vec<usize>>, MaskKind) {
    let (inputs, mask, _) = stage_inputs(batch, stage, cfg, &mut SeededRng::seed_from_u64(seed)).unwrap();
    (inputs, mask)
}
