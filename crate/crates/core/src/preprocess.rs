//! Tokenization, vocabularies and fixed-shape numeric encoding of patches.
//!
//! Vocabularies are persisted next to the model so new patches can be encoded
//! without access to the training corpus.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LabeledPatch;
use crate::patch::{LineTag, Patch};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const RESERVED: usize = 2;

pub const NUM_TOKEN: &str = "<num>";
pub const SHA_TOKEN: &str = "<sha>";
pub const STR_TOKEN: &str = "<str>";

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("vocabulary kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch {
        expected: VocabKind,
        found: VocabKind,
    },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("intermediate file line {line}: {detail}")]
    Intermediate { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn tokenize_message(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.len() > 8 && t.bytes().all(|b| b.is_ascii_digit()) {
                NUM_TOKEN.to_owned()
            } else if t.len() >= 12 && t.bytes().all(|b| b.is_ascii_hexdigit()) {
                SHA_TOKEN.to_owned()
            } else {
                t.to_owned()
            }
        })
        .collect()
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn tokenize_code_line(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_ident(c) {
            let start = i;
            while i < chars.len() && is_ident(chars[i]) {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c == '"' && !(i > 0 && chars[i - 1] == '\'' && chars.get(i + 1) == Some(&'\'')) {
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                i += if chars[i] == '\\' { 2 } else { 1 };
            }
            i += 1;
            out.push(STR_TOKEN.to_owned());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabKind {
    Message,
    Code,
}

/// Token to index mapping. Index 0 is padding, 1 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    kind: VocabKind,
    min_freq: u32,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    kind: VocabKind,
    min_freq: u32,
    tokens: Vec<String>,
}

impl Vocab {
    fn from_tokens(
        kind: VocabKind,
        min_freq: u32,
        tokens: Vec<String>,
    ) -> Result<Self, PreprocessError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), (i + RESERVED) as u32).is_some() {
                return Err(PreprocessError::InvalidVocab(format!(
                    "duplicate token `{t}`"
                )));
            }
        }
        if min_freq == 0 {
            return Err(PreprocessError::InvalidVocab(
                "min_freq must be >= 1".into(),
            ));
        }
        Ok(Vocab {
            kind,
            min_freq,
            tokens,
            index,
        })
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn min_freq(&self) -> u32 {
        self.min_freq
    }

    /// Number of indices including PAD and UNK.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    /// Non-reserved tokens in index order (index = position + 2).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            kind: self.kind,
            min_freq: self.min_freq,
            tokens: self.tokens.clone(),
        };
        serde_json::to_string(&file).expect("vocab serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let f: VocabFile = serde_json::from_str(text)?;
        Self::from_tokens(f.kind, f.min_freq, f.tokens)
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Assigns indices by descending frequency, ties broken lexicographically.
pub fn build_vocab<I, S, T>(token_streams: I, kind: VocabKind, min_freq: u32) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let min_freq = min_freq.max(1);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for stream in token_streams {
        for t in stream {
            *counts.entry(t.as_ref().to_owned()).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= u64::from(min_freq))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(kind, min_freq, kept.into_iter().map(|(t, _)| t).collect())
        .expect("counted tokens are unique")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeConfig {
    /// Message tokens kept.
    pub max_msg_tokens: usize,
    /// Files kept per patch.
    pub max_files: usize,
    /// Lines kept per side (removed/added) per file.
    pub max_lines: usize,
    /// Tokens kept per code line.
    pub max_line_tokens: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            max_msg_tokens: 64,
            max_files: 8,
            max_lines: 16,
            max_line_tokens: 32,
        }
    }
}

impl EncodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_msg_tokens == 0
            || self.max_files == 0
            || self.max_lines == 0
            || self.max_line_tokens == 0
        {
            return Err("encode dimensions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedFile {
    pub removed_ids: Vec<Vec<u32>>,
    pub added_ids: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPatch {
    pub sha: String,
    pub msg_ids: Vec<u32>,
    pub files: Vec<EncodedFile>,
    pub label: Option<u8>,
}

impl EncodedPatch {
    /// Checks the declared shape and vocabulary bounds.
    pub fn check_shape(
        &self,
        cfg: &EncodeConfig,
        msg_vocab: usize,
        code_vocab: usize,
    ) -> Result<(), String> {
        if self.msg_ids.len() != cfg.max_msg_tokens {
            return Err(format!(
                "msg_ids has length {}, expected {}",
                self.msg_ids.len(),
                cfg.max_msg_tokens
            ));
        }
        if let Some(id) = self.msg_ids.iter().find(|&&id| id as usize >= msg_vocab) {
            return Err(format!("message id {id} out of range {msg_vocab}"));
        }
        if self.files.len() > cfg.max_files {
            return Err(format!(
                "{} files exceed limit {}",
                self.files.len(),
                cfg.max_files
            ));
        }
        for f in &self.files {
            for side in [&f.removed_ids, &f.added_ids] {
                if side.len() != cfg.max_lines
                    || side.iter().any(|l| l.len() != cfg.max_line_tokens)
                {
                    return Err("code matrix has wrong shape".into());
                }
                if let Some(id) = side.iter().flatten().find(|&&id| id as usize >= code_vocab) {
                    return Err(format!("code id {id} out of range {code_vocab}"));
                }
            }
        }
        Ok(())
    }
}

pub fn encode_message<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.lookup(t.as_ref()))
        .collect();
    ids.resize(max_len, PAD);
    ids
}

fn check_kind(vocab: &Vocab, expected: VocabKind) -> Result<(), PreprocessError> {
    if vocab.kind != expected {
        return Err(PreprocessError::KindMismatch {
            expected,
            found: vocab.kind,
        });
    }
    Ok(())
}

pub fn message_tokens(patch: &Patch) -> Vec<String> {
    tokenize_message(&patch.commit.message())
}

/// Token streams of every removed and added line, in patch order.
pub fn code_tokens(patch: &Patch) -> impl Iterator<Item = Vec<String>> + '_ {
    patch
        .files
        .iter()
        .flat_map(|f| &f.hunks)
        .flat_map(|h| &h.lines)
        .filter(|l| l.tag != LineTag::Context)
        .map(|l| tokenize_code_line(&l.text))
}

pub fn encode_patch(
    patch: &Patch,
    vocab_msg: &Vocab,
    vocab_code: &Vocab,
    cfg: &EncodeConfig,
) -> Result<EncodedPatch, PreprocessError> {
    check_kind(vocab_msg, VocabKind::Message)?;
    check_kind(vocab_code, VocabKind::Code)?;
    let msg_ids = encode_message(&message_tokens(patch), vocab_msg, cfg.max_msg_tokens);
    let blank = vec![PAD; cfg.max_line_tokens];
    let files = patch
        .files
        .iter()
        .take(cfg.max_files)
        .map(|f| {
            let side = |tag: LineTag| {
                let mut rows: Vec<Vec<u32>> = f
                    .hunks
                    .iter()
                    .flat_map(|h| &h.lines)
                    .filter(|l| l.tag == tag)
                    .take(cfg.max_lines)
                    .map(|l| {
                        encode_message(
                            &tokenize_code_line(&l.text),
                            vocab_code,
                            cfg.max_line_tokens,
                        )
                    })
                    .collect();
                rows.resize(cfg.max_lines, blank.clone());
                rows
            };
            EncodedFile {
                removed_ids: side(LineTag::Removed),
                added_ids: side(LineTag::Added),
            }
        })
        .collect();
    Ok(EncodedPatch {
        sha: patch.commit.sha.clone(),
        msg_ids,
        files,
        label: None,
    })
}

/// Builds both vocabularies from `corpus` and encodes it with targets.
pub fn prepare_corpus(
    corpus: &[LabeledPatch],
    cfg: &EncodeConfig,
    min_freq_msg: u32,
    min_freq_code: u32,
) -> Result<(Vocab, Vocab, Vec<EncodedPatch>), PreprocessError> {
    let vocab_msg = build_vocab(
        corpus.iter().map(|lp| message_tokens(&lp.patch)),
        VocabKind::Message,
        min_freq_msg,
    );
    let vocab_code = build_vocab(
        corpus.iter().flat_map(|lp| code_tokens(&lp.patch)),
        VocabKind::Code,
        min_freq_code,
    );
    let encoded = encode_labeled(corpus, &vocab_msg, &vocab_code, cfg)?;
    Ok((vocab_msg, vocab_code, encoded))
}

pub fn encode_labeled(
    corpus: &[LabeledPatch],
    vocab_msg: &Vocab,
    vocab_code: &Vocab,
    cfg: &EncodeConfig,
) -> Result<Vec<EncodedPatch>, PreprocessError> {
    corpus
        .iter()
        .map(|lp| {
            let mut e = encode_patch(&lp.patch, vocab_msg, vocab_code, cfg)?;
            e.label = Some(lp.label.as_target());
            Ok(e)
        })
        .collect()
}

/// Writes one encoded patch per line.
pub fn write_intermediate(path: &Path, encoded: &[EncodedPatch]) -> Result<(), PreprocessError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in encoded {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_intermediate(path: &Path) -> Result<Vec<EncodedPatch>, PreprocessError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PreprocessError::Intermediate {
                line: i + 1,
                detail: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
