//! Scores computed from precomputed embeddings: cosine, CLIPScore,
//! RefCLIPScore-style harmonic mean, greedy-matching BertScore, plus loading
//! of scalar score channels (ViLT, grammar) produced offline.
//!
//! The MCIP variants are the same operations run against a different
//! [`EmbeddingStore`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("empty token matrix")]
    EmptyMatrix,
    #[error("at least one reference embedding is required")]
    NoReferences,
    #[error("`{id}`: non-finite value")]
    NonFinite { id: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("binary embedding payload: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Caption,
    /// One row per token.
    Tokens,
}

impl FromStr for EmbeddingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image" => Ok(EmbeddingKind::Image),
            "caption" => Ok(EmbeddingKind::Caption),
            "tokens" | "token-sequence" => Ok(EmbeddingKind::Tokens),
            other => Err(format!("unknown embedding kind `{other}`")),
        }
    }
}

/// Row-major matrix view over one token-sequence entry.
#[derive(Debug, Clone, Copy)]
pub struct TokenMatrix<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> TokenMatrix<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(TokenMatrix { data, dim })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

/// Id -> vector (or token matrix) map of one kind and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: EmbeddingKind,
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(kind: EmbeddingKind, dim: usize) -> Self {
        EmbeddingTable {
            kind,
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts a flattened entry (a vector, or concatenated token rows).
    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let id = id.into();
        let shape_ok = match self.kind {
            EmbeddingKind::Tokens => !values.is_empty() && values.len().is_multiple_of(self.dim),
            _ => values.len() == self.dim,
        };
        if !shape_ok {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { id });
        }
        if self.entries.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.entries.insert(id, values);
        Ok(())
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn matrix(&self, id: &str) -> Option<TokenMatrix<'_>> {
        self.entries.get(id).map(|v| TokenMatrix {
            data: v,
            dim: self.dim,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Ids from `wanted` that have no entry.
    pub fn missing<'a>(&self, wanted: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        wanted
            .into_iter()
            .filter(|id| !self.entries.contains_key(*id))
            .map(str::to_string)
            .collect()
    }
}

/// Key of the `k`-th reference caption of an image in caption/token tables.
/// Candidate captions are keyed by their sample id.
pub fn reference_key(image_id: &str, k: usize) -> String {
    format!("{image_id}#ref{k}")
}

/// The image, caption and token tables of one embedding model family.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    pub image: Option<EmbeddingTable>,
    pub caption: Option<EmbeddingTable>,
    pub tokens: Option<EmbeddingTable>,
}

impl EmbeddingStore {
    pub fn table(&self, kind: EmbeddingKind) -> Option<&EmbeddingTable> {
        match kind {
            EmbeddingKind::Image => self.image.as_ref(),
            EmbeddingKind::Caption => self.caption.as_ref(),
            EmbeddingKind::Tokens => self.tokens.as_ref(),
        }
    }

    fn slot(&mut self, kind: EmbeddingKind) -> &mut Option<EmbeddingTable> {
        match kind {
            EmbeddingKind::Image => &mut self.image,
            EmbeddingKind::Caption => &mut self.caption,
            EmbeddingKind::Tokens => &mut self.tokens,
        }
    }

    pub fn insert(&mut self, kind: EmbeddingKind, id: String, values: Vec<f64>) -> Result<()> {
        let dim = match kind {
            EmbeddingKind::Tokens => self
                .tokens
                .as_ref()
                .map(|t| t.dim)
                .unwrap_or_else(|| values.len()),
            _ => values.len(),
        };
        let table = self
            .slot(kind)
            .get_or_insert_with(|| EmbeddingTable::new(kind, dim));
        table.insert(id, values)
    }

    /// Merges another store's tables (e.g. a token file loaded separately).
    pub fn merge(&mut self, other: EmbeddingStore) -> Result<()> {
        for table in [other.image, other.caption, other.tokens]
            .into_iter()
            .flatten()
        {
            for (id, values) in table.entries {
                if table.kind == EmbeddingKind::Tokens && self.tokens.is_none() {
                    self.tokens = Some(EmbeddingTable::new(EmbeddingKind::Tokens, table.dim));
                }
                self.insert(table.kind, id, values)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct EmbeddingRecord {
    id: String,
    kind: EmbeddingKind,
    vectors: serde_json::Value,
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn parse_reals(v: &serde_json::Value) -> Option<Vec<f64>> {
    v.as_array()?
        .iter()
        .map(serde_json::Value::as_f64)
        .collect()
}

/// Reads the line-delimited embedding format
/// `{"id": .., "kind": "image"|"caption"|"tokens", "vectors": [..] | [[..], ..]}`.
/// Blank lines and lines starting with `#` (extractor headers) are skipped.
pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let parse_err = |message: String| EmbedError::Parse {
            line: line_no,
            message,
        };
        let rec: EmbeddingRecord =
            serde_json::from_str(line.trim()).map_err(|e| parse_err(e.to_string()))?;
        let values = match rec.kind {
            EmbeddingKind::Tokens => {
                let rows = rec
                    .vectors
                    .as_array()
                    .ok_or_else(|| parse_err("token vectors must be an array of arrays".into()))?;
                let mut flat = Vec::new();
                let mut width = None;
                for row in rows {
                    let row = parse_reals(row)
                        .ok_or_else(|| parse_err("token row must be an array of numbers".into()))?;
                    if *width.get_or_insert(row.len()) != row.len() {
                        return Err(parse_err("ragged token matrix".into()));
                    }
                    flat.extend(row);
                }
                if let (Some(w), Some(t)) = (width, store.tokens.as_ref()) {
                    if w != t.dim {
                        return Err(EmbedError::DimensionMismatch {
                            expected: t.dim,
                            got: w,
                        });
                    }
                }
                if store.tokens.is_none() {
                    let w = width.ok_or(EmbedError::EmptyMatrix)?;
                    store.tokens = Some(EmbeddingTable::new(EmbeddingKind::Tokens, w));
                }
                flat
            }
            _ => parse_reals(&rec.vectors)
                .ok_or_else(|| parse_err("vectors must be an array of numbers".into()))?,
        };
        if let Some(t) = store.table(rec.kind) {
            if rec.kind != EmbeddingKind::Tokens && values.len() != t.dim() {
                return Err(EmbedError::DimensionMismatch {
                    expected: t.dim(),
                    got: values.len(),
                });
            }
        }
        store.insert(rec.kind, rec.id, values)?;
    }
    Ok(store)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    read_embeddings(BufReader::new(File::open(path)?))
}

pub fn write_embeddings<W: Write>(store: &EmbeddingStore, mut out: W) -> Result<()> {
    for table in [&store.image, &store.caption, &store.tokens]
        .into_iter()
        .flatten()
    {
        for (id, values) in &table.entries {
            let vectors = match table.kind {
                EmbeddingKind::Tokens => serde_json::Value::from(
                    values
                        .chunks_exact(table.dim)
                        .map(|r| serde_json::Value::from(r.to_vec()))
                        .collect::<Vec<_>>(),
                ),
                _ => serde_json::Value::from(values.clone()),
            };
            let rec = EmbeddingRecord {
                id: id.clone(),
                kind: table.kind,
                vectors,
            };
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";

/// Packed single-kind table: `EMB1`, u32 LE dimension, then per record
/// u32 LE id length, id bytes, `dim` f32 LE values.
pub fn read_binary_table<R: Read>(mut reader: R, kind: EmbeddingKind) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_binary_table(&bytes, kind)
}

pub fn decode_binary_table(bytes: &[u8], kind: EmbeddingKind) -> Result<EmbeddingTable> {
    if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
        return Err(EmbedError::Corrupt("missing EMB1 header".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(EmbedError::Corrupt("zero dimension".into()));
    }
    let mut table = EmbeddingTable::new(kind, dim);
    let mut pos = 8;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| EmbedError::Corrupt(format!("truncated record at byte {pos}")))?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    while pos < bytes.len() {
        let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(&mut pos, id_len)?)
            .map_err(|_| EmbedError::Corrupt("id is not UTF-8".into()))?
            .to_string();
        let raw = take(&mut pos, dim * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        table.insert(id, values)?;
    }
    Ok(table)
}

/// Encodes a vector table in the packed format (values narrowed to f32).
pub fn encode_binary_table(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + table.len() * (8 + table.dim * 4));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for (id, values) in &table.entries {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub const DEFAULT_CLIP_WEIGHT: f64 = 2.5;

/// `w * max(cos(image, caption), 0)`
pub fn clip_score(image: &[f64], caption: &[f64], weight: f64) -> Result<f64> {
    Ok(weight * cosine(image, caption)?.max(0.0))
}

/// Harmonic mean of the (capped at 1) CLIPScore and the best non-negative
/// caption-reference cosine.
pub fn clip_score_ref(
    image: &[f64],
    caption: &[f64],
    references: &[&[f64]],
    weight: f64,
) -> Result<f64> {
    if references.is_empty() {
        return Err(EmbedError::NoReferences);
    }
    let clip_term = clip_score(image, caption, weight)?.min(1.0);
    let mut best = f64::NEG_INFINITY;
    for r in references {
        best = best.max(cosine(caption, r)?);
    }
    Ok(harmonic_mean(clip_term, best.max(0.0)))
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy token matching over the cosine similarity matrix (no idf weights,
/// no baseline rescaling).
pub fn bert_score(candidate: TokenMatrix<'_>, reference: TokenMatrix<'_>) -> Result<BertScore> {
    if candidate.rows() == 0 || reference.rows() == 0 {
        return Err(EmbedError::EmptyMatrix);
    }
    if candidate.dim() != reference.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: candidate.dim(),
            got: reference.dim(),
        });
    }
    let mut sim = vec![0.0; candidate.rows() * reference.rows()];
    let cols = reference.rows();
    for (i, c) in candidate.iter_rows().enumerate() {
        for (j, r) in reference.iter_rows().enumerate() {
            sim[i * cols + j] = cosine(c, r)?;
        }
    }
    Ok(bert_score_from_similarity(&sim, candidate.rows(), cols))
}

/// P = mean of row maxima, R = mean of column maxima over a row-major
/// `rows x cols` similarity matrix.
pub fn bert_score_from_similarity(sim: &[f64], rows: usize, cols: usize) -> BertScore {
    assert_eq!(sim.len(), rows * cols);
    let precision = (0..rows)
        .map(|i| {
            sim[i * cols..(i + 1) * cols]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / rows as f64;
    let recall = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| sim[i * cols + j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / cols as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BertScore {
        precision,
        recall,
        f1,
    }
}

/// BertScore against several references: the reference with the best F1 wins.
pub fn bert_score_multi(
    candidate: TokenMatrix<'_>,
    references: &[TokenMatrix<'_>],
) -> Result<BertScore> {
    let mut best: Option<BertScore> = None;
    for r in references {
        let s = bert_score(candidate, *r)?;
        if best.is_none_or(|b| s.f1 > b.f1) {
            best = Some(s);
        }
    }
    best.ok_or(EmbedError::NoReferences)
}

/// A named scalar per sample, e.g. the ViLT matching score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreChannel {
    pub name: String,
    values: BTreeMap<String, f64>,
}

impl ScoreChannel {
    pub fn new(name: impl Into<String>) -> Self {
        ScoreChannel {
            name: name.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, value: f64) -> Result<()> {
        let id = sample_id.into();
        if !value.is_finite() {
            return Err(EmbedError::NonFinite { id });
        }
        if self.values.insert(id.clone(), value).is_some() {
            return Err(EmbedError::DuplicateId(id));
        }
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Option<f64> {
        self.values.get(sample_id).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Declared ids without a value, in the order given.
    pub fn missing<'a>(&self, declared: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        declared
            .into_iter()
            .filter(|id| !self.values.contains_key(*id))
            .map(str::to_string)
            .collect()
    }
}

#[derive(Deserialize)]
struct ChannelRecord {
    sample_id: String,
    value: serde_json::Value,
}

/// Reads `{"sample_id": .., "value": ..}` lines. Values may be numbers or
/// numeric strings (so that "NaN"/"inf" can be written and are rejected).
pub fn read_score_channel<R: BufRead>(reader: R, name: &str) -> Result<ScoreChannel> {
    let mut channel = ScoreChannel::new(name);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let parse_err = |message: String| EmbedError::Parse {
            line: idx + 1,
            message,
        };
        let rec: ChannelRecord =
            serde_json::from_str(line.trim()).map_err(|e| parse_err(e.to_string()))?;
        let value = match &rec.value {
            serde_json::Value::Number(n) => n.as_f64(),
            serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
            _ => None,
        }
        .ok_or_else(|| parse_err(format!("value for `{}` is not a number", rec.sample_id)))?;
        channel.insert(rec.sample_id, value)?;
    }
    Ok(channel)
}

pub fn load_score_channel(path: impl AsRef<Path>, name: &str) -> Result<ScoreChannel> {
    read_score_channel(BufReader::new(File::open(path)?), name)
}

pub fn write_score_channel<W: Write>(channel: &ScoreChannel, mut out: W) -> Result<()> {
    for (id, v) in channel.iter() {
        let line = serde_json::json!({ "sample_id": id, "value": v });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Checks every id in `declared` resolves in `table`; returns the unique gaps.
pub fn coverage_gaps<'a>(
    table: &EmbeddingTable,
    declared: impl IntoIterator<Item = &'a str>,
) -> Vec<String> {
    let mut seen = HashSet::new();
    table
        .missing(declared)
        .into_iter()
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_cases() {
        assert_abs_diff_eq!(
            cosine(&[0.6, 0.8], &[0.6, 0.8]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            10.0 / 14.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EmbedError::ZeroVector)
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn clip_score_cases() {
        let u = [1.0, 0.0];
        assert_abs_diff_eq!(clip_score(&u, &u, 2.5).unwrap(), 2.5);
        // cos = -0.2
        let neg = [-0.2, (1.0f64 - 0.04).sqrt()];
        assert_eq!(clip_score(&u, &neg, 2.5).unwrap(), 0.0);
        let c30 = [0.3, (1.0f64 - 0.09).sqrt()];
        assert_abs_diff_eq!(clip_score(&u, &c30, 2.5).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn clip_score_ref_cases() {
        let img = [1.0, 0.0];
        let cap = [1.0, 0.0];
        assert_abs_diff_eq!(clip_score_ref(&img, &cap, &[&cap], 2.5).unwrap(), 1.0);
        // clip term 0.5: cos(img, cap) = 0.2 at w = 2.5
        let cap2 = [0.2, (1.0f64 - 0.04).sqrt()];
        let v = clip_score_ref(&img, &cap2, &[&cap2], 2.5).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 0.5 / 1.5, epsilon = 1e-12);
        let opposite = [-cap2[0], -cap2[1]];
        assert_eq!(clip_score_ref(&img, &cap2, &[&opposite], 2.5).unwrap(), 0.0);
        assert!(matches!(
            clip_score_ref(&img, &cap, &[], 2.5),
            Err(EmbedError::NoReferences)
        ));
    }

    #[test]
    fn bert_score_hand_matrix() {
        let s = bert_score_from_similarity(&[1.0, 0.0, 0.0, 0.5], 2, 2);
        assert_abs_diff_eq!(s.precision, 0.75);
        assert_abs_diff_eq!(s.recall, 0.75);
        assert_abs_diff_eq!(s.f1, 0.75);
    }

    #[test]
    fn bert_score_identity_and_orthogonal() {
        let m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let a = TokenMatrix::new(&m, 3).unwrap();
        let s = bert_score(a, a).unwrap();
        assert_abs_diff_eq!(s.f1, 1.0);
        let c = [0.0, 0.0, 1.0];
        let s = bert_score(TokenMatrix::new(&c, 3).unwrap(), a).unwrap();
        assert_eq!((s.precision, s.f1), (0.0, 0.0));
        let empty: [f64; 0] = [];
        assert!(matches!(
            bert_score(TokenMatrix::new(&empty, 3).unwrap(), a),
            Err(EmbedError::EmptyMatrix)
        ));
    }

    #[test]
    fn channel_rejects_nan_naming_the_sample() {
        let text =
            "{\"sample_id\":\"s1\",\"value\":0.4}\n{\"sample_id\":\"s2\",\"value\":\"NaN\"}\n";
        match read_score_channel(text.as_bytes(), "vilt") {
            Err(EmbedError::NonFinite { id }) => assert_eq!(id, "s2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn channel_reports_missing_ids() {
        let text = "# extractor: vilt-itm\n{\"sample_id\":\"a\",\"value\":0.5}\n";
        let ch = read_score_channel(text.as_bytes(), "vilt").unwrap();
        assert_eq!(ch.len(), 1);
        assert_eq!(ch.missing(["a", "b"]), vec!["b".to_string()]);
    }

    #[test]
    fn jsonl_embeddings_round_trip() {
        let text = r#"{"id":"img1","kind":"image","vectors":[0.5,-1.0,2.0]}
{"id":"s1","kind":"caption","vectors":[1.0,0.0,0.0]}
{"id":"s1","kind":"tokens","vectors":[[1.0,0.0],[0.0,1.0]]}
"#;
        let store = read_embeddings(text.as_bytes()).unwrap();
        assert_eq!(store.image.as_ref().unwrap().dim(), 3);
        assert_eq!(
            store.tokens.as_ref().unwrap().matrix("s1").unwrap().rows(),
            2
        );
        let mut buf = Vec::new();
        write_embeddings(&store, &mut buf).unwrap();
        assert_eq!(read_embeddings(buf.as_slice()).unwrap(), store);
    }

    #[test]
    fn jsonl_embeddings_reject_mixed_dimensions() {
        let text = "{\"id\":\"a\",\"kind\":\"image\",\"vectors\":[1.0,2.0]}\n{\"id\":\"b\",\"kind\":\"image\",\"vectors\":[1.0]}\n";
        assert!(matches!(
            read_embeddings(text.as_bytes()),
            Err(EmbedError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn binary_table_round_trip_and_truncation() {
        let mut t = EmbeddingTable::new(EmbeddingKind::Image, 2);
        t.insert("img-1", vec![0.5, -0.25]).unwrap();
        t.insert("img-2", vec![1.0, 2.0]).unwrap();
        let bytes = encode_binary_table(&t);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(
            decode_binary_table(&bytes, EmbeddingKind::Image).unwrap(),
            t
        );
        assert!(matches!(
            decode_binary_table(&bytes[..bytes.len() - 1], EmbeddingKind::Image),
            Err(EmbedError::Corrupt(_))
        ));
        assert!(decode_binary_table(b"EMB2\x02\0\0\0", EmbeddingKind::Image).is_err());
    }
}
