//! Synthetic parallel corpora, the shared vocabulary, corpus files and
//! batching.
//!
//! Corpus files are UTF-8 text with one pair per line: source tokens, a
//! single tab, target tokens; tokens are space-separated. The vocabulary
//! sidecar lists one content token per line, line `i` (0-based) holding
//! the token with ID `i + 4`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SeededRng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const FIRST_CONTENT_ID: usize = 4;

const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    /// `n` content tokens named `t00`, `t01`, ...
    pub fn synthetic(n: usize) -> Self {
        let width = n.saturating_sub(1).to_string().len().max(2);
        Self {
            tokens: (0..n).map(|i| format!("t{i:0width$}")).collect(),
        }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if t.is_empty() || t.contains(char::is_whitespace) || SPECIALS.contains(&t.as_str()) {
                return Err(Error::Input(format!("invalid vocabulary token {t:?}")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens })
    }

    /// Total size including the reserved IDs.
    pub fn size(&self) -> usize {
        FIRST_CONTENT_ID + self.tokens.len()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn content_ids(&self) -> std::ops::Range<usize> {
        FIRST_CONTENT_ID..self.size()
    }

    pub fn token(&self, id: usize) -> &str {
        if id < FIRST_CONTENT_ID {
            SPECIALS[id]
        } else {
            self.tokens.get(id - FIRST_CONTENT_ID).map_or("<unk>", String::as_str)
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        if let Some(i) = SPECIALS.iter().position(|s| *s == token) {
            return Some(i);
        }
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| i + FIRST_CONTENT_ID)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        write_file(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::Input(format!("{}: empty vocabulary", path.display())));
        }
        Self::from_tokens(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Target is the reversed source mapped through a fixed bijection.
    RemapReverse,
    /// Target is the source mapped through a fixed bijection.
    RemapCopy,
    /// Mapped copy where a fixed subset of tokens is emitted twice.
    Expand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub content_tokens: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Expected target/source length ratio (`expand` only).
    pub ratio: f64,
    /// Seed of the token bijection; `None` is the identity map.
    pub map_seed: Option<u64>,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::RemapReverse,
            content_tokens: 48,
            min_len: 4,
            max_len: 24,
            ratio: 1.0,
            map_seed: Some(7),
        }
    }
}

/// The deterministic source → target function of a task.
#[derive(Debug, Clone)]
pub struct TaskMap {
    kind: TaskKind,
    perm: Vec<usize>,
    doubled: Vec<bool>,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.content_tokens == 0 {
            return Err(Error::Config("task.content_tokens must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "task length range [{}, {}] is invalid",
                self.min_len, self.max_len
            )));
        }
        if self.kind == TaskKind::Expand && !(1.0..=2.0).contains(&self.ratio) {
            return Err(Error::Config(format!(
                "task.ratio {} must lie in [1, 2] for expand",
                self.ratio
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::synthetic(self.content_tokens)
    }

    pub fn task_map(&self) -> TaskMap {
        let n = self.content_tokens;
        let mut perm: Vec<usize> = (0..n).collect();
        if let Some(seed) = self.map_seed {
            perm.shuffle(&mut SeededRng::seed_from_u64(seed));
        }
        let n_doubled = if self.kind == TaskKind::Expand {
            ((self.ratio - 1.0) * n as f64).round() as usize
        } else {
            0
        };
        let doubled = (0..n).map(|i| i < n_doubled).collect();
        TaskMap {
            kind: self.kind,
            perm,
            doubled,
        }
    }
}

impl TaskMap {
    pub fn map_token(&self, id: usize) -> usize {
        self.perm[id - FIRST_CONTENT_ID] + FIRST_CONTENT_ID
    }

    pub fn apply(&self, src: &[usize]) -> Vec<usize> {
        match self.kind {
            TaskKind::RemapReverse => src.iter().rev().map(|&t| self.map_token(t)).collect(),
            TaskKind::RemapCopy => src.iter().map(|&t| self.map_token(t)).collect(),
            TaskKind::Expand => {
                let mut out = Vec::with_capacity(src.len() * 2);
                for &t in src {
                    let m = self.map_token(t);
                    out.push(m);
                    if self.doubled[t - FIRST_CONTENT_ID] {
                        out.push(m);
                    }
                }
                out
            }
        }
    }
}

/// Aligned source/target token-ID sequences (content tokens only).
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub vocab: Vocab,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean target/source length ratio over all pairs.
    pub fn length_ratio(&self) -> f64 {
        let sum: f64 = self
            .pairs
            .iter()
            .map(|(s, t)| t.len() as f64 / s.len() as f64)
            .sum();
        sum / self.pairs.len().max(1) as f64
    }

    pub fn sources(&self) -> impl Iterator<Item = &[usize]> {
        self.pairs.iter().map(|(s, _)| s.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[usize]> {
        self.pairs.iter().map(|(_, t)| t.as_slice())
    }

    /// First `n` pairs.
    pub fn head(&self, n: usize) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self.pairs.iter().take(n).cloned().collect(),
            vocab: self.vocab.clone(),
        }
    }
}

pub fn gen_corpus(spec: &SyntheticTaskSpec, n: usize, rng: &mut SeededRng) -> Result<ParallelCorpus> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let vocab = spec.vocab();
    let map = spec.task_map();
    let pairs = (0..n)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(vocab.content_ids())).collect();
            let tgt = map.apply(&src);
            (src, tgt)
        })
        .collect();
    Ok(ParallelCorpus { pairs, vocab })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_corpus(corpus: &ParallelCorpus, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (s, t) in &corpus.pairs {
        let _ = writeln!(
            text,
            "{}\t{}",
            corpus.vocab.detokenize(s),
            corpus.vocab.detokenize(t)
        );
    }
    write_file(path, &text)
}

pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::Input(format!("{}: empty corpus file", path.display())));
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(lineno, "missing tab separator".into()))?;
        let side = |s: &str, which: &str| -> Result<Vec<usize>> {
            let ids = s
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    vocab
                        .id(t)
                        .filter(|&id| id >= FIRST_CONTENT_ID)
                        .ok_or_else(|| parse_err(lineno, format!("unknown token {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if ids.is_empty() {
                return Err(parse_err(lineno, format!("empty {which} sequence")));
            }
            Ok(ids)
        };
        let s = side(src, "source")?;
        let t = side(tgt, "target")?;
        pairs.push((s, t));
    }
    Ok(ParallelCorpus {
        pairs,
        vocab: vocab.clone(),
    })
}

/// Appends the end-of-sequence marker.
pub fn with_eos(seq: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(seq.len() + 1);
    out.extend_from_slice(seq);
    out.push(EOS);
    out
}

/// Model-ready batch: EOS-terminated sequences padded with [`PAD`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
    /// 1.0 at real target positions, 0.0 at padding.
    pub loss_mask: Vec<Vec<f64>>,
    pub src_lens: Vec<usize>,
    pub tgt_lens: Vec<usize>,
}

impl Batch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> Self {
        let (src, tgt): (Vec<_>, Vec<_>) = pairs
            .into_iter()
            .map(|(s, t)| (with_eos(s), with_eos(t)))
            .unzip();
        let src_lens: Vec<usize> = src.iter().map(Vec::len).collect();
        let tgt_lens: Vec<usize> = tgt.iter().map(Vec::len).collect();
        let pad = |rows: Vec<Vec<usize>>| {
            let w = rows.iter().map(Vec::len).max().unwrap_or(0);
            rows.into_iter()
                .map(|mut r| {
                    r.resize(w, PAD);
                    r
                })
                .collect::<Vec<_>>()
        };
        let tw = tgt_lens.iter().copied().max().unwrap_or(0);
        let loss_mask = tgt_lens
            .iter()
            .map(|&l| (0..tw).map(|j| if j < l { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            src: pad(src),
            tgt: pad(tgt),
            loss_mask,
            src_lens,
            tgt_lens,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn source(&self, i: usize) -> &[usize] {
        &self.src[i][..self.src_lens[i]]
    }

    pub fn target(&self, i: usize) -> &[usize] {
        &self.tgt[i][..self.tgt_lens[i]]
    }

    pub fn target_tokens(&self) -> usize {
        self.tgt_lens.iter().sum()
    }
}

/// One epoch of batches over a corpus.
pub struct BatchIter<'a> {
    corpus: &'a ParallelCorpus,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        Some(Batch::from_pairs(idx.iter().map(|&i| {
            let (s, t) = &self.corpus.pairs[i];
            (s.as_slice(), t.as_slice())
        })))
    }
}

pub fn batch_iter<'a>(
    corpus: &'a ParallelCorpus,
    batch_size: usize,
    rng: &mut SeededRng,
    shuffle: bool,
) -> BatchIter<'a> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    BatchIter {
        corpus,
        order,
        batch_size,
        next: 0,
    }
}

/// Endless stream of shuffled batches, reshuffling every epoch.
pub struct BatchStream<'a> {
    corpus: &'a ParallelCorpus,
    batch_size: usize,
    rng: SeededRng,
    current: BatchIter<'a>,
}

impl<'a> BatchStream<'a> {
    pub fn new(corpus: &'a ParallelCorpus, batch_size: usize, seed: u64) -> Self {
        let mut rng = SeededRng::seed_from_u64(seed);
        let current = batch_iter(corpus, batch_size, &mut rng, true);
        Self {
            corpus,
            batch_size,
            rng,
            current,
        }
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.corpus.is_empty() {
            return None;
        }
        match self.current.next() {
            Some(b) => Some(b),
            None => {
                self.current = batch_iter(self.corpus, self.batch_size, &mut self.rng, true);
                self.current.next()
            }
        }
    }
}
