use std::fmt::Write as _;

use crate::data::ParallelCorpus;
use crate::error::Result;
use crate::inference::at_beam_decode;
use crate::model::{InferenceModel, Transformer};
use crate::tensor::ParamSet;

/// What happened during distillation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillReport {
    pub pairs: usize,
    pub beam: usize,
    /// Pair indices whose teacher output was empty (target became EOS only).
    pub empty_outputs: Vec<usize>,
    /// Pairs whose distilled target differs from the original.
    pub changed: usize,
}

impl DistillReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pairs: {}", self.pairs);
        let _ = writeln!(out, "beam: {}", self.beam);
        let _ = writeln!(out, "changed targets: {}", self.changed);
        let _ = writeln!(out, "empty outputs: {}", self.empty_outputs.len());
        for i in &self.empty_outputs {
            let _ = writeln!(out, "  pair {i}: replaced by EOS");
        }
        out
    }
}

/// Replaces every target with the teacher's beam-search output for its
/// source. Sources and order are unchanged. An empty teacher output
/// becomes an empty content sequence, i.e. a lone EOS at the model level.
pub fn distill_corpus(
    teacher: &Transformer,
    teacher_params: &ParamSet,
    corpus: &ParallelCorpus,
    beam: usize,
) -> Result<(ParallelCorpus, DistillReport)> {
    let im = InferenceModel::new(teacher, teacher_params);
    let mut report = DistillReport {
        pairs: corpus.len(),
        beam,
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(corpus.len());
    for (i, (src, tgt)) in corpus.pairs.iter().enumerate() {
        let out = at_beam_decode(&im, src, beam)?;
        if out.is_empty() {
            report.empty_outputs.push(i);
        }
        if &out != tgt {
            report.changed += 1;
        }
        pairs.push((src.clone(), out));
    }
    Ok((
        ParallelCorpus {
            pairs,
            vocab: corpus.vocab.clone(),
        },
        report,
    ))
}
