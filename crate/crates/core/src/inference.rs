//! NAT decoding, AT greedy and beam search, and noisy parallel decoding
//! (NPD) with teacher rescoring.
//!
//! Sources are passed as content tokens; the end-of-sequence marker is
//! appended here. Returned hypotheses are content tokens with everything
//! from the first EOS on removed.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{with_eos, Vocab, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncodedSource, InferenceModel};
use crate::model::{hard_copy, shift_right};
use crate::tensor::kernels::log_softmax_row;
use crate::tensor::MaskKind;

/// Guards `floor` against products like `2.9999999999999996`.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NpdConfig {
    /// Target/source length ratio.
    pub beta: f64,
    /// Half-window `B`; 0 means a single NAT pass.
    pub half_window: usize,
    /// Divide teacher log-probabilities by candidate length.
    pub normalize: bool,
}

impl Default for NpdConfig {
    fn default() -> Self {
        Self {
            beta: 1.1,
            half_window: 4,
            normalize: true,
        }
    }
}

impl NpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("npd.beta {} must be positive", self.beta)));
        }
        Ok(())
    }
}

/// One NPD candidate. `tokens` is the raw decoder output (EOS slot
/// included), so `tokens.len() == assumed_length`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeCandidate {
    pub tokens: Vec<usize>,
    pub assumed_length: usize,
    pub teacher_logprob: f64,
}

impl DecodeCandidate {
    pub fn hypothesis(&self) -> Vec<usize> {
        strip_eos(&self.tokens)
    }
}

/// Prefix before the first EOS.
pub fn strip_eos(tokens: &[usize]) -> Vec<usize> {
    let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
    tokens[..end].to_vec()
}

fn floor_len(x: f64) -> i64 {
    (x + FLOOR_EPS).floor() as i64
}

/// Target lengths `floor(β·T_x − B) ..= floor(β·T_x + B)`, clamped to
/// `[1, max_len]` and deduplicated, ascending.
pub fn candidate_lengths(t_x: usize, cfg: &NpdConfig, max_len: usize) -> Vec<usize> {
    let center = cfg.beta * t_x as f64;
    let b = cfg.half_window as f64;
    let lo = floor_len(center - b);
    let hi = floor_len(center + b);
    let cap = max_len.max(1) as i64;
    let mut out: Vec<usize> = (lo..=hi).map(|l| l.clamp(1, cap) as usize).collect();
    out.dedup();
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// One NAT decoder pass over `hard_copy(src, t_y)`; returns the per-position
/// argmax, exactly `t_y` tokens.
pub fn nat_decode(im: &InferenceModel, src: &[usize], t_y: usize) -> Result<Vec<usize>> {
    let enc = im.encode(&with_eos(src))?;
    nat_decode_encoded(im, &enc, &with_eos(src), t_y)
}

fn nat_decode_encoded(im: &InferenceModel, enc: &EncodedSource, src_eos: &[usize], t_y: usize) -> Result<Vec<usize>> {
    if t_y == 0 {
        return Err(Error::Input("NAT target length must be at least 1".into()));
    }
    let v = im.model().config().vocab_size;
    let logits = im.decode_full(enc, &hard_copy(src_eos, t_y), MaskKind::Nat)?;
    Ok(logits.chunks(v).map(argmax).collect())
}

/// NAT translation assuming `content_len` content tokens (plus an EOS slot).
pub fn nat_translate(im: &InferenceModel, src: &[usize], content_len: usize) -> Result<Vec<usize>> {
    Ok(strip_eos(&nat_decode(im, src, content_len + 1)?))
}

/// Content tokens an AT decode may emit: the EOS-terminated output must
/// still fit in `max_len`.
fn at_content_cap(im: &InferenceModel) -> usize {
    im.model().config().max_len - 1
}

/// Stepwise argmax decoding until EOS or the length cap.
pub fn at_greedy(im: &InferenceModel, src: &[usize]) -> Result<Vec<usize>> {
    let enc = im.encode(&with_eos(src))?;
    let cap = at_content_cap(im);
    let mut state = im.start();
    let mut prev = BOS;
    let mut out = Vec::new();
    while out.len() < cap {
        let next = argmax(&im.step(&enc, &mut state, prev)?);
        if next == EOS {
            break;
        }
        out.push(next);
        prev = next;
    }
    Ok(out)
}

struct Hyp {
    tokens: Vec<usize>,
    logprob: f64,
    state: DecoderState,
}

/// Length-normalized beam search. Scores are `logprob / (len + 1)` with
/// the EOS counted; unfinished hypotheses at the length cap compete with
/// finished ones on `logprob / len`.
pub fn at_beam_decode(im: &InferenceModel, src: &[usize], beam: usize) -> Result<Vec<usize>> {
    if beam == 0 {
        return Err(Error::Input("beam must be at least 1".into()));
    }
    let enc = im.encode(&with_eos(src))?;
    let cap = at_content_cap(im);
    let v = im.model().config().vocab_size;
    let mut alive = vec![Hyp {
        tokens: vec![],
        logprob: 0.0,
        state: im.start(),
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut lp = vec![0.0; v];

    while !alive.is_empty() && finished.len() < beam {
        if alive[0].tokens.len() >= cap {
            for h in alive.drain(..) {
                let n = h.tokens.len().max(1) as f64;
                finished.push((h.tokens, h.logprob / n));
            }
            break;
        }
        let mut expansions: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, h) in alive.iter_mut().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let logits = im.step(&enc, &mut h.state, prev)?;
            log_softmax_row(&logits, &mut lp);
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            expansions.extend(order.into_iter().take(beam).map(|tok| (h.logprob + lp[tok], hi, tok)));
        }
        expansions.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(beam);
        for (score, hi, tok) in expansions {
            if next.len() >= beam || finished.len() >= beam {
                break;
            }
            let parent = &alive[hi];
            if tok == EOS {
                let n = (parent.tokens.len() + 1) as f64;
                finished.push((parent.tokens.clone(), score / n));
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Hyp {
                    tokens,
                    logprob: score,
                    state: parent.state.clone(),
                });
            }
        }
        alive = next;
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (tokens, score) in finished {
        if best.as_ref().map_or(true, |(_, b)| score > *b) {
            best = Some((tokens, score));
        }
    }
    Ok(best.map(|(t, _)| t).unwrap_or_default())
}

/// Summed teacher log-probability of an EOS-terminated `candidate`, from
/// one teacher-forced forward pass.
pub fn teacher_score(teacher: &InferenceModel, src: &[usize], candidate: &[usize]) -> Result<f64> {
    let enc = teacher.encode(&with_eos(src))?;
    teacher_score_encoded(teacher, &enc, candidate)
}

/// [`teacher_score`] divided by the candidate length.
pub fn teacher_score_normalized(teacher: &InferenceModel, src: &[usize], candidate: &[usize]) -> Result<f64> {
    Ok(teacher_score(teacher, src, candidate)? / candidate.len() as f64)
}

fn teacher_score_encoded(teacher: &InferenceModel, enc: &EncodedSource, candidate: &[usize]) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Input("cannot score an empty candidate".into()));
    }
    let v = teacher.model().config().vocab_size;
    let logits = teacher.decode_full(enc, &shift_right(candidate), MaskKind::At)?;
    let mut lp = vec![0.0; v];
    let mut total = 0.0;
    for (row, &y) in logits.chunks(v).zip(candidate) {
        log_softmax_row(row, &mut lp);
        total += lp[y];
    }
    Ok(total)
}

/// Result of [`npd_decode`]: the chosen hypothesis and every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct NpdOutput {
    pub hypothesis: Vec<usize>,
    pub chosen: usize,
    pub candidates: Vec<DecodeCandidate>,
}

/// Best candidate: highest score, ties to the shorter assumed length, then
/// the lower index. Independent of the order candidates arrive in.
pub fn select_candidate(candidates: &[DecodeCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let o = &candidates[b];
                let better = c.teacher_logprob > o.teacher_logprob
                    || (c.teacher_logprob == o.teacher_logprob && c.assumed_length < o.assumed_length);
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Noisy parallel decoding: one NAT pass per candidate length, rescored by
/// the teacher. Lengths count content tokens; each pass decodes one extra
/// slot for EOS. With `B = 0` no teacher is needed or consulted.
pub fn npd_decode(
    student: &InferenceModel,
    teacher: Option<&InferenceModel>,
    src: &[usize],
    cfg: &NpdConfig,
) -> Result<NpdOutput> {
    let src_eos = with_eos(src);
    let max_content = student.model().config().max_len.saturating_sub(1);
    let lengths = candidate_lengths(src.len().max(1), cfg, max_content);
    let enc = student.encode(&src_eos)?;
    if cfg.half_window == 0 {
        let tokens = nat_decode_encoded(student, &enc, &src_eos, lengths[0] + 1)?;
        let cand = DecodeCandidate {
            assumed_length: tokens.len(),
            tokens,
            teacher_logprob: 0.0,
        };
        return Ok(NpdOutput {
            hypothesis: cand.hypothesis(),
            chosen: 0,
            candidates: vec![cand],
        });
    }
    let teacher = teacher.ok_or_else(|| Error::Config("NPD with B ≥ 1 needs a teacher model".into()))?;
    let teacher_enc = teacher.encode(&src_eos)?;
    let mut candidates = Vec::with_capacity(lengths.len());
    for &l in &lengths {
        let tokens = nat_decode_encoded(student, &enc, &src_eos, l + 1)?;
        let scored = with_eos(&strip_eos(&tokens));
        let mut s = teacher_score_encoded(teacher, &teacher_enc, &scored)?;
        if cfg.normalize {
            s /= scored.len() as f64;
        }
        candidates.push(DecodeCandidate {
            assumed_length: tokens.len(),
            tokens,
            teacher_logprob: s,
        });
    }
    let chosen = select_candidate(&candidates).expect("at least one candidate length");
    Ok(NpdOutput {
        hypothesis: candidates[chosen].hypothesis(),
        chosen,
        candidates,
    })
}

/// One detokenized hypothesis per line, in input order.
pub fn write_hypotheses(path: &Path, hyps: &[Vec<usize>], vocab: &Vocab) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for h in hyps {
        writeln!(f, "{}", vocab.detokenize(h)).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
