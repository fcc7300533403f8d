//! Dataset ingestion: tokenization, the dual-label sentence format, and
//! per-aspect instance encoding.
//!
//! On disk a sentence is one token per line with three space-separated
//! fields, `token ate_label polarity`, and a blank line between sentences.
//! The polarity field is `-1` on non-aspect tokens. Example:
//!
//! ```text
//! The O -1
//! price B_asp 2
//! is O -1
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lcf::{compute_srd, SrdVector};

/// Target value for positions that do not contribute to a loss.
pub const IGNORE_INDEX: i64 = -1;

pub const POLARITY_NEGATIVE: i64 = 0;
pub const POLARITY_NEUTRAL: i64 = 1;
pub const POLARITY_POSITIVE: i64 = 2;
pub const NO_POLARITY: i64 = -1;
pub const POLARITY_NAMES: [&str; 3] = ["negative", "neutral", "positive"];

/// Token classes for aspect extraction.
pub const ATE_CLASSES: usize = 3;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AteTag {
    BeginAspect,
    InsideAspect,
    Outside,
}

impl AteTag {
    pub fn id(self) -> i64 {
        match self {
            AteTag::BeginAspect => 0,
            AteTag::InsideAspect => 1,
            AteTag::Outside => 2,
        }
    }

    pub fn from_id(id: i64) -> Option<AteTag> {
        match id {
            0 => Some(AteTag::BeginAspect),
            1 => Some(AteTag::InsideAspect),
            2 => Some(AteTag::Outside),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AteTag::BeginAspect => "B_asp",
            AteTag::InsideAspect => "I_asp",
            AteTag::Outside => "O",
        }
    }

    pub fn parse(s: &str) -> Option<AteTag> {
        match s {
            "B_asp" => Some(AteTag::BeginAspect),
            "I_asp" => Some(AteTag::InsideAspect),
            "O" => Some(AteTag::Outside),
            _ => None,
        }
    }

    pub fn is_aspect(self) -> bool {
        !matches!(self, AteTag::Outside)
    }
}

impl fmt::Display for AteTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageMode {
    English,
    Chinese,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Base,
    Spc,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty input text")]
    EmptyText,
    #[error("line {line}: expected `token ate_label polarity`, got {got:?}")]
    LineFormat { line: usize, got: String },
    #[error("line {line}: unknown aspect tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: polarity must be -1, 0, 1 or 2, got {got:?}")]
    BadPolarity { line: usize, got: String },
    #[error("line {line}: I_asp without a preceding aspect token")]
    IobViolation { line: usize },
    #[error("line {line}: polarity set on a non-aspect token")]
    PolarityOnOutside { line: usize },
    #[error("line {line}: aspect token without a polarity")]
    MissingPolarity { line: usize },
    #[error("line {line}: aspect chunk mixes polarity labels")]
    InconsistentChunk { line: usize },
    #[error("invalid sentence at token {at}: {reason}")]
    InvalidSentence { at: usize, reason: &'static str },
    #[error("aspect span {start}..{end} does not survive truncation to {kept} body tokens")]
    AspectTruncated { start: usize, end: usize, kept: usize },
    #[error("max_seq_len {max} cannot hold the layout overhead of {overhead} positions")]
    SequenceTooShort { max: usize, overhead: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

enum Defect {
    Iob(usize),
    PolarityOnOutside(usize),
    MissingPolarity(usize),
    InconsistentChunk(usize),
}

fn check_labels(tags: &[AteTag], polarities: &[i64]) -> Result<(), Defect> {
    let mut chunk_polarity = NO_POLARITY;
    for (i, (&tag, &pol)) in tags.iter().zip(polarities).enumerate() {
        match tag {
            AteTag::Outside => {
                if pol != NO_POLARITY {
                    return Err(Defect::PolarityOnOutside(i));
                }
            }
            AteTag::BeginAspect => {
                if !(0..3).contains(&pol) {
                    return Err(Defect::MissingPolarity(i));
                }
                chunk_polarity = pol;
            }
            AteTag::InsideAspect => {
                let continues = i > 0 && tags[i - 1].is_aspect();
                if !continues {
                    return Err(Defect::Iob(i));
                }
                if !(0..3).contains(&pol) {
                    return Err(Defect::MissingPolarity(i));
                }
                if pol != chunk_polarity {
                    return Err(Defect::InconsistentChunk(i));
                }
            }
        }
    }
    Ok(())
}

/// Tokens with dual labels: an IOB aspect tag and a polarity per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    tokens: Vec<String>,
    ate_labels: Vec<AteTag>,
    polarity_labels: Vec<i64>,
}

impl LabeledSentence {
    pub fn new(
        tokens: Vec<String>,
        ate_labels: Vec<AteTag>,
        polarity_labels: Vec<i64>,
    ) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::InvalidSentence { at: 0, reason: "sentence is empty" });
        }
        if tokens.len() != ate_labels.len() || tokens.len() != polarity_labels.len() {
            return Err(CorpusError::InvalidSentence { at: 0, reason: "label sequences differ in length" });
        }
        check_labels(&ate_labels, &polarity_labels).map_err(|d| match d {
            Defect::Iob(at) => CorpusError::InvalidSentence { at, reason: "I_asp without a preceding aspect" },
            Defect::PolarityOnOutside(at) => {
                CorpusError::InvalidSentence { at, reason: "polarity on a non-aspect token" }
            }
            Defect::MissingPolarity(at) => {
                CorpusError::InvalidSentence { at, reason: "aspect token without a polarity" }
            }
            Defect::InconsistentChunk(at) => {
                CorpusError::InvalidSentence { at, reason: "aspect chunk mixes polarity labels" }
            }
        })?;
        Ok(Self { tokens, ate_labels, polarity_labels })
    }

    /// All-O sentence from plain tokens (prediction input).
    pub fn unlabeled(tokens: Vec<String>) -> Result<Self, CorpusError> {
        let n = tokens.len();
        Self::new(tokens, vec![AteTag::Outside; n], vec![NO_POLARITY; n])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ate_labels(&self) -> &[AteTag] {
        &self.ate_labels
    }

    pub fn polarity_labels(&self) -> &[i64] {
        &self.polarity_labels
    }
}

/// One maximal `B_asp (I_asp)*` chunk; `end` is exclusive.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AspectSpan {
    pub start: usize,
    pub end: usize,
    pub polarity: i64,
}

/// Spans of all aspect chunks, left to right.
pub fn extract_aspects(s: &LabeledSentence) -> Vec<AspectSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, i64)> = None;
    for (i, &tag) in s.ate_labels.iter().enumerate() {
        match tag {
            AteTag::BeginAspect => {
                if let Some((start, polarity)) = open.take() {
                    spans.push(AspectSpan { start, end: i, polarity });
                }
                open = Some((i, s.polarity_labels[i]));
            }
            AteTag::InsideAspect => {}
            AteTag::Outside => {
                if let Some((start, polarity)) = open.take() {
                    spans.push(AspectSpan { start, end: i, polarity });
                }
            }
        }
    }
    if let Some((start, polarity)) = open {
        spans.push(AspectSpan { start, end: s.len(), polarity });
    }
    spans
}

/// English mode splits on whitespace and detaches trailing punctuation;
/// Chinese mode emits one token per CJK character and groups contiguous
/// Latin or digit runs.
pub fn tokenize(text: &str, mode: LanguageMode) -> Result<Vec<String>, CorpusError> {
    let tokens = match mode {
        LanguageMode::English => tokenize_english(text),
        LanguageMode::Chinese => tokenize_chinese(text),
    };
    if tokens.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    Ok(tokens)
}

fn tokenize_english(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut chars: Vec<char> = word.chars().collect();
        let mut trailing = Vec::new();
        while let Some(&last) = chars.last() {
            if last.is_ascii_punctuation() && chars.len() > 1 {
                trailing.push(last);
                chars.pop();
            } else {
                break;
            }
        }
        tokens.push(chars.into_iter().collect());
        tokens.extend(trailing.into_iter().rev().map(String::from));
    }
    tokens
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}' | '\u{F900}'..='\u{FAFF}')
}

fn tokenize_chinese(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    let flush = |run: &mut String, tokens: &mut Vec<String>| {
        if !run.is_empty() {
            tokens.push(std::mem::take(run));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut run, &mut tokens);
        } else if is_cjk(c) {
            flush(&mut run, &mut tokens);
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            run.push(c);
        } else {
            flush(&mut run, &mut tokens);
            tokens.push(c.to_string());
        }
    }
    flush(&mut run, &mut tokens);
    tokens
}

/// Parse the line-oriented dual-label format. Errors carry 1-based line
/// numbers.
pub fn parse_atepc(text: &str) -> Result<Vec<LabeledSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<AteTag> = Vec::new();
    let mut polarities: Vec<i64> = Vec::new();
    let mut line_starts: Vec<usize> = Vec::new();

    let flush = |tokens: &mut Vec<String>,
                 tags: &mut Vec<AteTag>,
                 polarities: &mut Vec<i64>,
                 line_starts: &mut Vec<usize>,
                 sentences: &mut Vec<LabeledSentence>|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        check_labels(tags, polarities).map_err(|d| match d {
            Defect::Iob(at) => CorpusError::IobViolation { line: line_starts[at] },
            Defect::PolarityOnOutside(at) => CorpusError::PolarityOnOutside { line: line_starts[at] },
            Defect::MissingPolarity(at) => CorpusError::MissingPolarity { line: line_starts[at] },
            Defect::InconsistentChunk(at) => CorpusError::InconsistentChunk { line: line_starts[at] },
        })?;
        let sentence = LabeledSentence {
            tokens: std::mem::take(tokens),
            ate_labels: std::mem::take(tags),
            polarity_labels: std::mem::take(polarities),
        };
        line_starts.clear();
        sentences.push(sentence);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut polarities, &mut line_starts, &mut sentences)?;
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(CorpusError::LineFormat { line, got: raw.to_string() });
        }
        let tag = AteTag::parse(fields[1])
            .ok_or_else(|| CorpusError::UnknownTag { line, tag: fields[1].to_string() })?;
        let polarity: i64 = fields[2]
            .parse()
            .ok()
            .filter(|p| (-1..3).contains(p))
            .ok_or_else(|| CorpusError::BadPolarity { line, got: fields[2].to_string() })?;
        tokens.push(fields[0].to_string());
        tags.push(tag);
        polarities.push(polarity);
        line_starts.push(line);
    }
    flush(&mut tokens, &mut tags, &mut polarities, &mut line_starts, &mut sentences)?;
    Ok(sentences)
}

pub fn parse_atepc_file(path: &Path) -> Result<Vec<LabeledSentence>, CorpusError> {
    parse_atepc(&fs::read_to_string(path)?)
}

/// Canonical serialization: single-space fields, one blank line between
/// sentences, trailing newline. `parse_atepc` of the result round-trips.
pub fn serialize_atepc(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for ((token, tag), polarity) in s.tokens.iter().zip(&s.ate_labels).zip(&s.polarity_labels) {
            out.push_str(token);
            out.push(' ');
            out.push_str(tag.label());
            out.push(' ');
            out.push_str(&polarity.to_string());
            out.push('\n');
        }
    }
    out
}

/// Token ids with four reserved entries. Frozen after build.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

impl Vocabulary {
    fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let token_to_id = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { token_to_id, tokens }
    }

    /// Dense ids in first-occurrence order over the training sentences.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a LabeledSentence>) -> Self {
        let mut vocab = Self::reserved_only();
        for sentence in sentences {
            for token in sentence.tokens() {
                vocab.intern(token);
            }
        }
        vocab
    }

    fn intern(&mut self, token: &str) {
        if !self.token_to_id.contains_key(token) {
            self.token_to_id.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&id| self.tokens[id].clone()).collect()
    }

    /// One non-reserved token per line; the line index plus the reserved
    /// count is the id.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for token in &self.tokens[RESERVED.len()..] {
            out.push_str(token);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut vocab = Self::reserved_only();
        for line in fs::read_to_string(path)?.lines() {
            if !line.is_empty() {
                vocab.intern(line);
            }
        }
        Ok(vocab)
    }
}

/// One (sentence, aspect) pair encoded for the model.
#[derive(Clone, Debug)]
pub struct TrainingInstance {
    pub input_ids: Vec<usize>,
    pub attention_valid: Vec<bool>,
    pub layout: Layout,
    /// Aspect center in padded coordinates.
    pub aspect_center: usize,
    pub aspect_len: usize,
    /// Per-position IOB target ids; `IGNORE_INDEX` outside the sentence body.
    pub ate_targets: Vec<i64>,
    /// Polarity class, or `NO_POLARITY` for aspect-less instances.
    pub apc_target: i64,
    pub srd: SrdVector,
    /// Sentence tokens kept after truncation; body occupies positions
    /// `1..=body_len`.
    pub body_len: usize,
    /// Positions before padding starts.
    pub valid_len: usize,
}

impl TrainingInstance {
    pub fn seq_len(&self) -> usize {
        self.input_ids.len()
    }

    /// Start of the appended `[SEP] aspect [SEP]` region under the
    /// sentence-pair layout; the local-context focus treats it as non-local.
    pub fn pair_suffix_start(&self) -> Option<usize> {
        match self.layout {
            Layout::Base => None,
            Layout::Spc => Some(1 + self.body_len),
        }
    }
}

fn encode_instance(
    s: &LabeledSentence,
    span: Option<AspectSpan>,
    layout: Layout,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<TrainingInstance, CorpusError> {
    let aspect_tokens = span.map(|sp| &s.tokens()[sp.start..sp.end]).unwrap_or(&[]);
    let overhead = match layout {
        Layout::Base => 2,
        Layout::Spc => 3 + aspect_tokens.len(),
    };
    let budget = max_seq_len
        .checked_sub(overhead)
        .filter(|&b| b > 0)
        .ok_or(CorpusError::SequenceTooShort { max: max_seq_len, overhead })?;

    // Truncate from the right of the sentence body, never the aspect suffix.
    let body_len = s.len().min(budget);
    if let Some(sp) = span {
        if sp.end > body_len {
            return Err(CorpusError::AspectTruncated { start: sp.start, end: sp.end, kept: body_len });
        }
    }

    let mut input_ids = Vec::with_capacity(max_seq_len);
    input_ids.push(CLS_ID);
    input_ids.extend(s.tokens()[..body_len].iter().map(|t| vocab.id(t)));
    input_ids.push(SEP_ID);
    if layout == Layout::Spc {
        input_ids.extend(aspect_tokens.iter().map(|t| vocab.id(t)));
        input_ids.push(SEP_ID);
    }
    let valid_len = input_ids.len();
    input_ids.resize(max_seq_len, PAD_ID);

    let mut attention_valid = vec![false; max_seq_len];
    attention_valid[..valid_len].fill(true);

    let mut ate_targets = vec![IGNORE_INDEX; max_seq_len];
    for (i, tag) in s.ate_labels()[..body_len].iter().enumerate() {
        ate_targets[1 + i] = tag.id();
    }

    let (aspect_center, aspect_len, apc_target) = match span {
        Some(sp) => {
            let start_padded = sp.start + 1;
            let end_padded = sp.end + 1;
            ((start_padded + end_padded - 1) / 2, sp.end - sp.start, sp.polarity)
        }
        // Aspect-less instances anchor the focus on the leading marker so
        // the forward pass stays uniform; the APC row is ignored.
        None => (0, 1, NO_POLARITY),
    };

    Ok(TrainingInstance {
        input_ids,
        attention_valid,
        layout,
        aspect_center,
        aspect_len,
        ate_targets,
        apc_target,
        srd: compute_srd(max_seq_len, aspect_center, aspect_len),
        body_len,
        valid_len,
    })
}

/// One instance per aspect span. Sentences without aspects yield nothing
/// here; see [`make_sentence_instance`] for extraction-only rows.
pub fn make_instances(
    s: &LabeledSentence,
    layout: Layout,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<Vec<TrainingInstance>, CorpusError> {
    extract_aspects(s)
        .into_iter()
        .map(|span| encode_instance(s, Some(span), layout, vocab, max_seq_len))
        .collect()
}

/// Sentence-level instance without an APC target, used for aspect-less
/// sentences and for extraction passes. Always uses the base layout: there
/// is no aspect to append.
pub fn make_sentence_instance(
    s: &LabeledSentence,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<TrainingInstance, CorpusError> {
    encode_instance(s, None, Layout::Base, vocab, max_seq_len)
}
