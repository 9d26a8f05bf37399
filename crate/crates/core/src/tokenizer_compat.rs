//! Character-offset token alignment and tokenizer compatibility metrics.
//!
//! Records arrive as JSON lines, one text per line:
//! `{"text_id": "...", "tokens": [["tok", start, end], ...]}` with `end`
//! exclusive. Vocabulary files hold one token per line.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizationRecord {
    pub text_id: String,
    pub tokens: Vec<Token>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    text_id: String,
    tokens: Vec<(String, usize, usize)>,
}

impl TokenizationRecord {
    pub fn new(text_id: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        let rec = Self {
            text_id: text_id.into(),
            tokens,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Shorthand for tests and tools: tokens given as `(start, end)` spans.
    pub fn from_spans(text_id: impl Into<String>, spans: &[(usize, usize)]) -> Result<Self> {
        let tokens = spans
            .iter()
            .map(|&(start, end)| Token {
                text: String::new(),
                start,
                end,
            })
            .collect();
        Self::new(text_id, tokens)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            if t.start >= t.end {
                return Err(Error::Malformed(format!(
                    "{}: token {i} has empty span [{}, {})",
                    self.text_id, t.start, t.end
                )));
            }
            if i > 0 {
                let prev = &self.tokens[i - 1];
                if t.start < prev.start || t.end < prev.end {
                    return Err(Error::Malformed(format!(
                        "{}: offsets decrease at token {i}",
                        self.text_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Options for reading adapter output.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Token strings dropped before validation (BOS/EOS and the like).
    pub special_tokens: Vec<String>,
}

impl IngestOptions {
    pub fn with_common_specials() -> Self {
        Self {
            special_tokens: [
                "<s>",
                "</s>",
                "<bos>",
                "<eos>",
                "<|begin_of_text|>",
                "<|endoftext|>",
                "<pad>",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

pub fn parse_record_line(line: &str, opts: &IngestOptions) -> Result<TokenizationRecord> {
    let raw: RawRecord = serde_json::from_str(line)?;
    let tokens = raw
        .tokens
        .into_iter()
        .filter(|(text, _, _)| !opts.special_tokens.iter().any(|s| s == text))
        .map(|(text, start, end)| Token { text, start, end })
        .collect();
    TokenizationRecord::new(raw.text_id, tokens)
}

pub fn read_records(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Vec<TokenizationRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record_line(&line, opts)
            .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub dropped: usize,
}

/// Pairs each A-token with the first B-token whose end is at or after its end.
pub fn align_tokens(a: &TokenizationRecord, b: &TokenizationRecord) -> Result<Alignment> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot align empty record {:?}",
            a.text_id
        )));
    }
    let mut pairs = Vec::with_capacity(a.len());
    let mut dropped = 0;
    for (i, ta) in a.tokens.iter().enumerate() {
        let j = b.tokens.partition_point(|tb| tb.end < ta.end);
        if j == b.len() {
            dropped += 1;
        } else {
            pairs.push((i, j));
        }
    }
    Ok(Alignment { pairs, dropped })
}

/// Share of A-tokens whose aligned B-token has the identical span.
pub fn exact_match_rate(a: &TokenizationRecord, b: &TokenizationRecord) -> Result<f64> {
    let al = align_tokens(a, b)?;
    let hits = al
        .pairs
        .iter()
        .filter(|&&(i, j)| a.tokens[i].start == b.tokens[j].start && a.tokens[i].end == b.tokens[j].end)
        .count();
    Ok(hits as f64 / a.len() as f64)
}

/// Mean per-text exact match over records paired by `text_id`.
pub fn corpus_exact_match(a: &[TokenizationRecord], b: &[TokenizationRecord]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let mut total = 0.0;
    for ra in a {
        let rb = b
            .iter()
            .find(|r| r.text_id == ra.text_id)
            .ok_or_else(|| Error::InvalidArgument(format!("text {:?} missing on the other side", ra.text_id)))?;
        total += exact_match_rate(ra, rb)?;
    }
    Ok(total / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabSet {
    pub model_id: String,
    tokens: BTreeSet<String>,
}

impl VocabSet {
    pub fn new(model_id: impl Into<String>, tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let model_id = model_id.into();
        let mut set = BTreeSet::new();
        for t in tokens {
            if !set.insert(t.clone()) {
                return Err(Error::Malformed(format!(
                    "{model_id}: duplicate vocabulary entry {t:?}"
                )));
            }
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("{model_id}: empty vocabulary")));
        }
        Ok(Self { model_id, tokens: set })
    }

    pub fn read(model_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(model_id, text.lines().filter(|l| !l.is_empty()).map(str::to_owned))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }
}

pub fn vocab_jaccard(a: &VocabSet, b: &VocabSet) -> f64 {
    let inter = a.tokens.intersection(&b.tokens).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument("pearson needs at least 3 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical("pearson on a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
