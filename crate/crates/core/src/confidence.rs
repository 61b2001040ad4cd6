//! Caption reliability scores from masked-token recovery probabilities.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{TokenSequence, FIRST_WORD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Lower bound applied to every confidence so no sample weight is zero.
pub const CONFIDENCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_VOCAB: usize = 256;

/// Probability of recovering a masked token from its context.
pub trait MaskedScorer: Send + Sync {
    fn name(&self) -> &str;

    /// `context` has `position` (0-based, excluding the summary token)
    /// replaced by the mask token; returns P(`original` | context).
    fn score(&self, context: &TokenSequence, position: usize, original: u32) -> f64;
}

/// Context-free unigram model with add-one smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCountScorer {
    probs: Vec<f64>,
}

impl ToyCountScorer {
    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probability(&self, id: u32) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }
}

impl MaskedScorer for ToyCountScorer {
    fn name(&self) -> &str {
        "unigram"
    }

    fn score(&self, _context: &TokenSequence, _position: usize, original: u32) -> f64 {
        self.probability(original)
    }
}

/// `P(w) = (count(w) + 1) / (N + V)` over the body tokens of `corpus`.
pub fn fit_toy_scorer(corpus: &[TokenSequence], vocab: usize) -> Result<ToyCountScorer> {
    if vocab == 0 {
        return Err(Error::Domain("vocabulary must be nonempty".into()));
    }
    let mut counts = vec![0usize; vocab];
    let mut total = 0usize;
    for seq in corpus {
        for &id in seq.body() {
            let slot = counts
                .get_mut(id as usize)
                .ok_or(Error::Vocabulary { id, vocab })?;
            *slot += 1;
            total += 1;
        }
    }
    let denom = (total + vocab) as f64;
    Ok(ToyCountScorer {
        probs: counts.iter().map(|&c| (c + 1) as f64 / denom).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformScorer {
    vocab: usize,
}

impl UniformScorer {
    pub fn new(vocab: usize) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::Domain("vocabulary must be nonempty".into()));
        }
        Ok(Self { vocab })
    }
}

impl MaskedScorer for UniformScorer {
    fn name(&self) -> &str {
        "uniform"
    }

    fn score(&self, _context: &TokenSequence, _position: usize, _original: u32) -> f64 {
        1.0 / self.vocab as f64
    }
}

/// What a scorer constructor may draw on.
pub struct ScorerArgs {
    pub vocab: usize,
    pub corpus: Vec<TokenSequence>,
}

pub fn scorer_registry() -> Registry<ScorerArgs, dyn MaskedScorer> {
    let mut reg: Registry<ScorerArgs, dyn MaskedScorer> = Registry::new("scorer");
    reg.register("unigram", |a: &ScorerArgs| {
        Ok(Box::new(fit_toy_scorer(&a.corpus, a.vocab)?) as Box<dyn MaskedScorer>)
    });
    reg.register("uniform", |a: &ScorerArgs| {
        Ok(Box::new(UniformScorer::new(a.vocab)?) as Box<dyn MaskedScorer>)
    });
    reg
}

/// Builds the named scorer. The unigram scorer is fitted on `corpus`.
pub fn build_scorer(name: &str, vocab: usize, corpus: &[TokenSequence]) -> Result<Box<dyn MaskedScorer>> {
    let args = ScorerArgs {
        vocab,
        corpus: corpus.to_vec(),
    };
    scorer_registry().build(name, &args)
}

/// Mean masked-recovery probability, clamped to `[CONFIDENCE_FLOOR, 1]`.
pub fn confidence_score(sentence: &TokenSequence, scorer: &dyn MaskedScorer) -> Result<f64> {
    if sentence.is_empty() {
        return Err(Error::Domain("cannot score an empty sentence".into()));
    }
    let mut sum = 0.0;
    for (k, &w) in sentence.body().iter().enumerate() {
        let p = scorer.score(&sentence.masked(k), k, w);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!(
                "scorer `{}` returned {p} for token {w}",
                scorer.name()
            )));
        }
        sum += p;
    }
    Ok((sum / sentence.len() as f64).clamp(CONFIDENCE_FLOOR, 1.0))
}

/// Scores every sentence in parallel; output order matches input order.
pub fn score_all(sentences: &[TokenSequence], scorer: &dyn MaskedScorer) -> Result<Vec<f64>> {
    sentences
        .par_iter()
        .map(|s| confidence_score(s, scorer))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rescale {
    #[default]
    None,
    BatchMean,
}

impl std::str::FromStr for Rescale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rescale::None),
            "batch-mean" => Ok(Rescale::BatchMean),
            other => Err(Error::Config(format!("unknown rescale mode `{other}`"))),
        }
    }
}

/// Applies the configured rescaling to one batch of confidences.
/// `BatchMean` divides by the batch mean, then clamps to `[floor, 1]`.
pub fn rescale(c: &[f64], mode: Rescale, floor: f64) -> Vec<f64> {
    match mode {
        Rescale::None => c.to_vec(),
        Rescale::BatchMean => {
            let mean = c.iter().sum::<f64>() / c.len().max(1) as f64;
            c.iter().map(|&x| (x / mean).clamp(floor, 1.0)).collect()
        }
    }
}

/// A tokenized caption with its reliability score.
#[derive(Debug, Clone, PartialEq)]
pub struct Narrative {
    pub tokens: TokenSequence,
    pub confidence: f64,
}

impl Narrative {
    pub fn new(tokens: TokenSequence, confidence: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::Contract(format!("confidence {confidence} outside (0, 1]")));
        }
        Ok(Self { tokens, confidence })
    }
}

/// Lowercases, splits on whitespace and punctuation, and hashes each word
/// into `[FIRST_WORD_ID, vocab)`. Words with non-ASCII characters map to
/// the unknown token.
pub fn tokenize(text: &str, vocab: usize) -> Vec<u32> {
    text.split(|ch: char| ch.is_whitespace() || ch.is_ascii_punctuation())
        .filter(|w| !w.is_empty())
        .map(|w| word_id(&w.to_lowercase(), vocab))
        .collect()
}

pub fn word_id(word: &str, vocab: usize) -> u32 {
    if !word.is_ascii() {
        return UNK_ID;
    }
    let buckets = (vocab as u64).saturating_sub(FIRST_WORD_ID as u64).max(1);
    FIRST_WORD_ID + (fnv1a(word.as_bytes()) % buckets) as u32
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode_caption(text: &str, vocab: usize) -> Result<TokenSequence> {
    let ids = tokenize(text, vocab);
    if ids.is_empty() {
        return Err(Error::Domain(format!("caption `{text}` has no tokens")));
    }
    TokenSequence::from_body(&ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub clip_id: String,
    pub token_count: usize,
    pub confidence: f64,
}

pub fn write_report<W: Write>(out: &mut W, records: &[ConfidenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_report<R: BufRead>(input: R) -> Result<Vec<ConfidenceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
