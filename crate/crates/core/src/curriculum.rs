//! Curriculum machinery for moving the decoder from teacher-forced inputs
//! with a causal mask to copied-source inputs with full visibility.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::MaskKind;
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacingKind {
    Ladder,
    Linear,
    Log,
}

impl fmt::Display for PacingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacingKind::Ladder => "ladder",
            PacingKind::Linear => "linear",
            PacingKind::Log => "log",
        })
    }
}

/// Pacing function over a curriculum of `total_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacingSpec {
    pub kind: PacingKind,
    pub total_steps: usize,
    /// Number of ladder sub-stages (ignored by the other kinds).
    pub k: usize,
}

impl PacingSpec {
    pub fn new(kind: PacingKind, total_steps: usize, k: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("curriculum steps must be at least 1".into()));
        }
        if kind == PacingKind::Ladder && !(1..=total_steps).contains(&k) {
            return Err(Error::Config(format!(
                "ladder K = {k} must lie in [1, {total_steps}]"
            )));
        }
        Ok(Self {
            kind,
            total_steps,
            k,
        })
    }
}

/// Substitution rate at curriculum step `i` (0-based).
///
/// - linear: `(i + 1) / I`
/// - log: `ln(i + 1) / ln(I)`
/// - ladder: `ceil((i + 1) · K / I) / K`, i.e. `K` equal plateaus ending at 1
pub fn pacing_value(spec: &PacingSpec, i: usize) -> Result<f64> {
    let total = spec.total_steps;
    if i >= total {
        return Err(Error::Step {
            step: i,
            limit: total,
        });
    }
    let alpha = match spec.kind {
        PacingKind::Linear => (i + 1) as f64 / total as f64,
        PacingKind::Log if total == 1 => 1.0,
        PacingKind::Log => ((i + 1) as f64).ln() / (total as f64).ln(),
        PacingKind::Ladder => {
            let k = spec.k;
            ((i + 1) * k).div_ceil(total) as f64 / k as f64
        }
    };
    Ok(alpha.clamp(0.0, 1.0))
}

/// Binary vector selecting which decoder-input positions take the NAT token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionMask {
    bits: Vec<bool>,
}

impl SubstitutionMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of substituted positions (the L1 norm).
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Number of positions substituted at rate `alpha` for length `len`.
pub fn substitution_count(alpha: f64, len: usize) -> usize {
    ((alpha * len as f64).floor() as usize).min(len)
}

/// Exactly `floor(alpha · len)` positions, drawn uniformly without replacement.
pub fn sample_substitution_mask(alpha: f64, len: usize, rng: &mut SeededRng) -> SubstitutionMask {
    let n = substitution_count(alpha, len);
    let mut bits = vec![false; len];
    for i in rand::seq::index::sample(rng, len, n) {
        bits[i] = true;
    }
    SubstitutionMask { bits }
}

/// Token-level mixing: NAT token where the mask is set, AT token elsewhere.
pub fn mix_decoder_input(
    z_at: &[usize],
    z_nat: &[usize],
    mask: &SubstitutionMask,
) -> Result<Vec<usize>> {
    if z_at.len() != z_nat.len() || z_at.len() != mask.len() {
        return Err(Error::Shape {
            op: "mix_decoder_input",
            lhs: vec![z_at.len(), z_nat.len()],
            rhs: vec![mask.len()],
        });
    }
    Ok(z_at
        .iter()
        .zip(z_nat)
        .zip(mask.bits())
        .map(|((&a, &n), &b)| if b { n } else { a })
        .collect())
}

/// Sentence-level alternative: the whole NAT input with probability `alpha`.
pub fn sentence_level_mix(
    z_at: &[usize],
    z_nat: &[usize],
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if z_at.len() != z_nat.len() {
        return Err(Error::Shape {
            op: "sentence_level_mix",
            lhs: vec![z_at.len()],
            rhs: vec![z_nat.len()],
        });
    }
    let take_nat = rng.gen::<f64>() < alpha;
    Ok(if take_nat { z_nat } else { z_at }.to_vec())
}

/// NAT mask strictly above the threshold.
pub fn select_mask_kind(alpha: f64, threshold: f64) -> MaskKind {
    if alpha > threshold {
        MaskKind::Nat
    } else {
        MaskKind::At
    }
}

/// Tracks the mask along a run and reports a switch back from NAT to AT,
/// which a monotone pacing function never produces.
#[derive(Debug, Clone, Default)]
pub struct MaskLatch {
    switched_at: Option<usize>,
}

impl MaskLatch {
    pub fn observe(&mut self, step: usize, kind: MaskKind) -> Result<()> {
        match (self.switched_at, kind) {
            (None, MaskKind::Nat) => self.switched_at = Some(step),
            (Some(at), MaskKind::At) => {
                return Err(Error::Input(format!(
                    "attention mask reverted to AT at step {step} after switching at {at}"
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn switched_at(&self) -> Option<usize> {
        self.switched_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionLevel {
    Token,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub at_steps: usize,
    pub cl_steps: usize,
    pub nat_steps: usize,
    pub pacing: PacingKind,
    pub ladder_k: usize,
    pub mask_threshold: f64,
    pub substitution: SubstitutionLevel,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            at_steps: 1_000,
            cl_steps: 4_000,
            nat_steps: 5_000,
            pacing: PacingKind::Log,
            ladder_k: 10,
            mask_threshold: 0.6,
            substitution: SubstitutionLevel::Token,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(Error::Config(format!(
                "curriculum.mask_threshold {} must lie in [0, 1]",
                self.mask_threshold
            )));
        }
        if self.cl_steps > 0 {
            PacingSpec::new(self.pacing, self.cl_steps, self.ladder_k)?;
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.at_steps + self.cl_steps + self.nat_steps
    }

    pub fn pacing_spec(&self) -> Result<PacingSpec> {
        PacingSpec::new(self.pacing, self.cl_steps, self.ladder_k)
    }

    /// Same total budget with the curriculum stage folded into NAT training.
    pub fn direct_transfer(&self) -> Self {
        Self {
            cl_steps: 0,
            nat_steps: self.nat_steps + self.cl_steps,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    AtTrain,
    Curriculum(usize),
    NatTrain,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::AtTrain => "at",
            Stage::Curriculum(_) => "curriculum",
            Stage::NatTrain => "nat",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn stage_of_step(step: usize, cfg: &CurriculumConfig) -> Stage {
    if step < cfg.at_steps {
        Stage::AtTrain
    } else if step < cfg.at_steps + cfg.cl_steps {
        Stage::Curriculum(step - cfg.at_steps)
    } else {
        Stage::NatTrain
    }
}

/// `step,alpha,mask` rows for a whole curriculum, every `every` steps
/// (the last step is always included).
pub fn pacing_curve_csv(spec: &PacingSpec, threshold: f64, every: usize) -> Result<String> {
    let every = every.max(1);
    let mut out = String::from("step,alpha,mask\n");
    for i in 0..spec.total_steps {
        if i % every != 0 && i + 1 != spec.total_steps {
            continue;
        }
        let a = pacing_value(spec, i)?;
        out.push_str(&format!("{i},{a},{}\n", select_mask_kind(a, threshold)));
    }
    Ok(out)
}
