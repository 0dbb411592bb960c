//! Translation quality and speed metrics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Plain corpus BLEU: any zero n-gram precision gives 0.
    None,
    /// For n ≥ 2, a zero match count becomes `(0 + 1) / (total + 1)`.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::AddOne,
        }
    }
}

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn new(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn add<T: Eq + Hash>(&mut self, hyp: &[T], reference: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=self.matches.len() {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
            self.matches[n - 1] += hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    /// Score in `[0, 100]`.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (i, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let p = if m > 0 {
                m as f64 / t as f64
            } else if i >= 1 && smoothing == Smoothing::AddOne {
                1.0 / (t as f64 + 1.0)
            } else {
                return 0.0;
            };
            log_sum += p.ln();
        }
        let geo = (log_sum / self.matches.len() as f64).exp();
        100.0 * brevity_penalty(self.hyp_len, self.ref_len) * geo
    }
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

pub fn bleu_stats<T: Eq + Hash, S: AsRef<[T]>>(
    hypotheses: &[S],
    references: &[S],
    max_n: usize,
) -> Result<BleuStats> {
    if hypotheses.is_empty() {
        return Err(Error::Input("BLEU of an empty corpus".into()));
    }
    if hypotheses.len() != references.len() || max_n == 0 {
        return Err(Error::Input(format!(
            "BLEU needs equal-length lists ({} hypotheses, {} references) and max_n ≥ 1",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::new(max_n);
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h.as_ref(), r.as_ref());
    }
    Ok(stats)
}

/// Corpus-level BLEU in `[0, 100]`.
pub fn bleu<T: Eq + Hash, S: AsRef<[T]>>(
    hypotheses: &[S],
    references: &[S],
    opts: BleuOptions,
) -> Result<f64> {
    Ok(bleu_stats(hypotheses, references, opts.max_n)?.score(opts.smoothing))
}

/// BLEU over whitespace-tokenized text lines.
pub fn bleu_text(hypotheses: &[String], references: &[String], opts: BleuOptions, case_sensitive: bool) -> Result<f64> {
    let tok = |s: &String| -> Vec<String> {
        s.split_whitespace()
            .map(|t| if case_sensitive { t.to_string() } else { t.to_lowercase() })
            .collect()
    };
    let h: Vec<Vec<String>> = hypotheses.iter().map(tok).collect();
    let r: Vec<Vec<String>> = references.iter().map(tok).collect();
    bleu(&h, &r, opts)
}

/// Adjacent duplicates: positions `t ≥ 1` with `tokens[t] == tokens[t-1]`.
pub fn repetition_count<T: PartialEq>(tokens: &[T]) -> usize {
    tokens.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn corpus_mean_repetitions<T: PartialEq, S: AsRef<[T]>>(hyps: &[S]) -> f64 {
    if hyps.is_empty() {
        return 0.0;
    }
    let total: usize = hyps.iter().map(|h| repetition_count(h.as_ref())).sum();
    total as f64 / hyps.len() as f64
}

/// Mean wall-clock milliseconds per sentence, batch size 1, after
/// `warmup_runs` untimed calls on the first sentences.
pub fn latency_benchmark<F, R>(mut decode_fn: F, test_set: &[Vec<usize>], warmup_runs: usize) -> Result<f64>
where
    F: FnMut(&[usize]) -> R,
{
    if test_set.is_empty() {
        return Err(Error::Input("latency benchmark needs a nonempty test set".into()));
    }
    for src in test_set.iter().cycle().take(warmup_runs) {
        std::hint::black_box(decode_fn(src));
    }
    let start = Instant::now();
    for src in test_set {
        std::hint::black_box(decode_fn(src));
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / test_set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub mean_repetitions: f64,
    pub latency_ms: f64,
    pub at_latency_ms: f64,
    pub speedup_vs_at: f64,
}

impl EvalReport {
    pub fn new(bleu: f64, mean_repetitions: f64, latency_ms: f64, at_latency_ms: f64) -> Self {
        Self {
            bleu,
            mean_repetitions,
            latency_ms,
            at_latency_ms,
            speedup_vs_at: at_latency_ms / latency_ms,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("BLEU", format!("{:.2}", self.bleu)),
            ("repetitions/sent", format!("{:.3}", self.mean_repetitions)),
            ("latency (ms)", format!("{:.3}", self.latency_ms)),
            ("AT latency (ms)", format!("{:.3}", self.at_latency_ms)),
            ("speedup", format!("{:.2}x", self.speedup_vs_at)),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<18} {v:>12}");
        }
        out
    }
}

/// One line of the per-sentence diagnostics file.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceDiagnostics {
    pub id: usize,
    pub len: usize,
    pub bleu_contrib: f64,
    pub repetitions: usize,
    pub latency_ms: f64,
}

pub fn diagnostics_csv(rows: &[SentenceDiagnostics]) -> String {
    let mut out = String::from("id,len,bleu_contrib,repetitions,latency_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{:.6}",
            r.id, r.len, r.bleu_contrib, r.repetitions, r.latency_ms
        );
    }
    out
}
