//! Caption corpus data model, ingestion, score normalization, zero filtering,
//! human-score aggregation and train/test splitting.
//!
//! The interchange format is line-delimited JSON, one [`CaptionSample`] per
//! line, fields in the order
//! `sample_id, image_id, model_id, candidate, references, source, raw_scores`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{mix_seed, rng_for};

/// Source tag of the human-tagged dataset collected with the annotation service.
pub const OWN_SOURCE: &str = "own";
pub const VICR_SOURCE: &str = "vicr";
pub const FLICKR8K_EXPERT_SOURCE: &str = "flickr8k-expert";
pub const FLICKR8K_CF_SOURCE: &str = "flickr8k-cf";
pub const COMPOSITE_SOURCE: &str = "composite";

/// Tagger ids carrying the two Composite ratings.
pub const COMPOSITE_RELEVANCE: &str = "relevance";
pub const COMPOSITE_THOROUGHNESS: &str = "thoroughness";

/// The five-point tagging scale, worst to best.
pub const SCALE: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub fn on_scale(score: f64) -> bool {
    SCALE.contains(&score)
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate sample_id `{0}`")]
    DuplicateId(String),
    #[error("sample `{0}` has an empty candidate caption")]
    EmptyCandidate(String),
    #[error("sample `{sample_id}`: score {score} is not on the five-point scale")]
    OffScale { sample_id: String, score: f64 },
    #[error("sample `{sample_id}`: score {score} outside the declared scale [{min}, {max}]")]
    OutOfRange {
        sample_id: String,
        score: f64,
        min: f64,
        max: f64,
    },
    #[error("no normalization rule for source `{0}`")]
    MissingRule(String),
    #[error("invalid normalization rule for `{0}`: maximum must exceed minimum")]
    InvalidRule(String),
    #[error("sample `{0}` has no raw scores")]
    NoScores(String),
    #[error("train fraction {0} is not inside (0, 1)")]
    InvalidFraction(f64),
    #[error("corpus of {n} samples is too small to split with train fraction {fraction}")]
    TooSmall { n: usize, fraction: f64 },
    #[error("unknown corpus format `{0}`")]
    UnknownFormat(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub tagger: String,
    pub phase: u32,
    pub score: f64,
}

/// One image-caption pair with its references and human judgments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSample {
    pub sample_id: String,
    pub image_id: String,
    pub model_id: String,
    pub candidate: String,
    #[serde(default)]
    pub references: Vec<String>,
    pub source: String,
    #[serde(default)]
    pub raw_scores: Vec<RawScore>,
}

impl CaptionSample {
    pub fn score_values(&self) -> Vec<f64> {
        self.raw_scores.iter().map(|r| r.score).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    samples: Vec<CaptionSample>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate sample ids.
    pub fn new(samples: Vec<CaptionSample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(CorpusError::DuplicateId(s.sample_id.clone()));
            }
        }
        Ok(Corpus { samples })
    }

    pub fn samples(&self) -> &[CaptionSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<CaptionSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CaptionSample> {
        self.samples.iter()
    }

    pub fn get(&self, sample_id: &str) -> Option<&CaptionSample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn counts_by_source(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.source.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn image_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.image_id.as_str()).collect()
    }

    /// Model ids in order of first appearance.
    pub fn model_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.model_id.as_str()))
            .map(|s| s.model_id.clone())
            .collect()
    }

    /// Keeps the samples satisfying `keep`, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&CaptionSample) -> bool) -> Corpus {
        Corpus {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a CaptionSample;
    type IntoIter = std::slice::Iter<'a, CaptionSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    JsonLines,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "ndjson" | "json-lines" => Ok(CorpusFormat::JsonLines),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusFormat::JsonLines => f.write_str("jsonl"),
        }
    }
}

const REQUIRED_FIELDS: [&str; 5] = ["sample_id", "image_id", "model_id", "candidate", "source"];

pub fn ingest_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let file = File::open(path)?;
    read_corpus(BufReader::new(file), format)
}

pub fn read_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Corpus> {
    let CorpusFormat::JsonLines = format;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        if let Some(field) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(CorpusError::MissingField {
                line: line_no,
                field,
            });
        }
        let sample: CaptionSample =
            serde_json::from_value(value).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        validate_sample(&sample)?;
        if !seen.insert(sample.sample_id.clone()) {
            return Err(CorpusError::DuplicateId(sample.sample_id));
        }
        samples.push(sample);
    }
    Ok(Corpus { samples })
}

fn validate_sample(sample: &CaptionSample) -> Result<()> {
    if sample.candidate.trim().is_empty() {
        return Err(CorpusError::EmptyCandidate(sample.sample_id.clone()));
    }
    for r in &sample.raw_scores {
        if !r.score.is_finite() || (sample.source == OWN_SOURCE && !on_scale(r.score)) {
            return Err(CorpusError::OffScale {
                sample_id: sample.sample_id.clone(),
                score: r.score,
            });
        }
    }
    Ok(())
}

/// Writes the corpus in the line-delimited interchange format.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for s in corpus.iter() {
        let line = serde_json::to_string(s).expect("caption samples always serialize");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_corpus(corpus, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    /// `(v - min) / (max - min)`
    Linear,
    /// Already a fraction in `[min, max]`; copied unchanged.
    PassThrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRule {
    pub source: String,
    pub min: f64,
    pub max: f64,
    pub kind: MappingKind,
    /// When set, only raw scores from this tagger id are kept (Composite can
    /// use relevance or thoroughness alone instead of their mean).
    #[serde(default)]
    pub only_tagger: Option<String>,
}

impl NormalizationRule {
    pub fn linear(source: &str, min: f64, max: f64) -> Self {
        NormalizationRule {
            source: source.into(),
            min,
            max,
            kind: MappingKind::Linear,
            only_tagger: None,
        }
    }

    pub fn pass_through(source: &str) -> Self {
        NormalizationRule {
            source: source.into(),
            min: 0.0,
            max: 1.0,
            kind: MappingKind::PassThrough,
            only_tagger: None,
        }
    }

    pub fn own() -> Self {
        Self::pass_through(OWN_SOURCE)
    }

    /// VICR 1..5 rating.
    pub fn vicr() -> Self {
        Self::linear(VICR_SOURCE, 1.0, 5.0)
    }

    /// Flickr8k-Expert 1..4 rating.
    pub fn flickr8k_expert() -> Self {
        Self::linear(FLICKR8K_EXPERT_SOURCE, 1.0, 4.0)
    }

    /// Flickr8k-CF fraction of "yes" answers.
    pub fn flickr8k_cf() -> Self {
        Self::pass_through(FLICKR8K_CF_SOURCE)
    }

    /// Composite relevance/thoroughness 1..5 ratings, averaged after mapping.
    pub fn composite() -> Self {
        Self::linear(COMPOSITE_SOURCE, 1.0, 5.0)
    }

    pub fn composite_only(tagger: &str) -> Self {
        NormalizationRule {
            only_tagger: Some(tagger.into()),
            ..Self::composite()
        }
    }

    /// Rules for the own dataset and the four external datasets.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::own(),
            Self::vicr(),
            Self::flickr8k_expert(),
            Self::flickr8k_cf(),
            Self::composite(),
        ]
    }

    pub fn apply(&self, sample_id: &str, v: f64) -> Result<f64> {
        if !(v.is_finite() && v >= self.min && v <= self.max) {
            return Err(CorpusError::OutOfRange {
                sample_id: sample_id.into(),
                score: v,
                min: self.min,
                max: self.max,
            });
        }
        Ok(match self.kind {
            MappingKind::Linear => (v - self.min) / (self.max - self.min),
            MappingKind::PassThrough => v,
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            MappingKind::Linear => self.max > self.min,
            MappingKind::PassThrough => self.max >= self.min,
        };
        if ok && self.min.is_finite() && self.max.is_finite() {
            Ok(())
        } else {
            Err(CorpusError::InvalidRule(self.source.clone()))
        }
    }
}

/// Maps every raw score into `[0, 1]` with the rule for the sample's source.
pub fn normalize_scores(corpus: &Corpus, rules: &[NormalizationRule]) -> Result<Corpus> {
    for r in rules {
        r.validate()?;
    }
    let mut samples = Vec::with_capacity(corpus.len());
    for s in corpus.iter() {
        let rule = rules
            .iter()
            .find(|r| r.source == s.source)
            .ok_or_else(|| CorpusError::MissingRule(s.source.clone()))?;
        let mut out = s.clone();
        out.raw_scores.clear();
        for raw in &s.raw_scores {
            if let Some(only) = &rule.only_tagger {
                if &raw.tagger != only {
                    continue;
                }
            }
            out.raw_scores.push(RawScore {
                score: rule.apply(&s.sample_id, raw.score)?,
                ..raw.clone()
            });
        }
        samples.push(out);
    }
    Ok(Corpus { samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub corpus: Corpus,
    pub removed: usize,
}

/// Drops samples whose mean normalized score is exactly zero. Samples without
/// any raw score carry no judgment and are kept.
pub fn filter_zero_scores(corpus: &Corpus) -> FilterOutcome {
    let kept = corpus.filtered(|s| s.raw_scores.is_empty() || mean(&s.score_values()) != 0.0);
    FilterOutcome {
        removed: corpus.len() - kept.len(),
        corpus: kept,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Vote,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "vote" | "voting" => Ok(Aggregation::Vote),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedScore {
    pub sample_id: String,
    pub mean_score: f64,
    pub vote_score: f64,
    pub n_raw: usize,
}

impl AggregatedScore {
    pub fn get(&self, method: Aggregation) -> f64 {
        match method {
            Aggregation::Mean => self.mean_score,
            Aggregation::Vote => self.vote_score,
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Modal value; ties are broken by a uniform draw among the tied values
/// (sorted ascending) from a generator seeded with `seed`.
pub fn vote(values: &[f64], seed: u64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &v in values {
        // fold -0.0 into 0.0
        let v = if v == 0.0 { 0.0 } else { v };
        *counts.entry(v.to_bits()).or_insert(0) += 1;
    }
    let best = *counts.values().max()?;
    let mut tied: Vec<f64> = counts
        .iter()
        .filter(|(_, &c)| c == best)
        .map(|(&bits, _)| f64::from_bits(bits))
        .collect();
    tied.sort_by(f64::total_cmp);
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    let mut rng = rng_for(seed, &[b"vote"]);
    Some(tied[rng.random_range(0..tied.len())])
}

/// Mean and vote aggregates for every sample. The tie-break stream for each
/// sample is derived from `seed` and its sample id.
pub fn aggregate(corpus: &Corpus, seed: u64) -> Result<Vec<AggregatedScore>> {
    corpus.iter().map(|s| aggregate_sample(s, seed)).collect()
}

pub fn aggregate_sample(sample: &CaptionSample, seed: u64) -> Result<AggregatedScore> {
    let values = sample.score_values();
    if values.is_empty() {
        return Err(CorpusError::NoScores(sample.sample_id.clone()));
    }
    let sample_seed = mix_seed(seed, &[sample.sample_id.as_bytes()]);
    Ok(AggregatedScore {
        sample_id: sample.sample_id.clone(),
        mean_score: mean(&values),
        vote_score: vote(&values, sample_seed).expect("non-empty"),
        n_raw: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    PerSample,
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub grouping: Grouping,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
            grouping: Grouping::PerSample,
        }
    }

    /// Own-dataset protocol: 240 of 600 samples for training.
    pub fn own_data(seed: u64) -> Self {
        Self::new(0.4, seed)
    }

    /// External-dataset protocol: 70% training.
    pub fn external(seed: u64) -> Self {
        Self::new(0.7, seed)
    }

    pub fn train_size(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).round() as usize
    }
}

/// Seeded partition into (train, test). Both parts keep corpus order.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(CorpusError::InvalidFraction(f));
    }
    let n = corpus.len();
    let target = spec.train_size(n);
    let too_small = CorpusError::TooSmall { n, fraction: f };
    if target == 0 || target >= n {
        return Err(too_small);
    }
    let mut rng = rng_for(spec.seed, &[b"split"]);
    let mut in_train = vec![false; n];
    match spec.grouping {
        Grouping::PerSample => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for &i in &order[..target] {
                in_train[i] = true;
            }
        }
        Grouping::PerImage => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in corpus.iter().enumerate() {
                groups.entry(s.image_id.as_str()).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            let mut taken = 0;
            for g in groups {
                if taken >= target {
                    break;
                }
                taken += g.len();
                for i in g {
                    in_train[i] = true;
                }
            }
            if taken == n {
                return Err(too_small);
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in corpus.iter().zip(in_train) {
        if t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    Ok((Corpus { samples: train }, Corpus { samples: test }))
}
