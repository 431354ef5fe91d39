//! The learned caption metric: pool precision, pool recall, the ViLT matching
//! score and a CLIP-family score, regressed onto mean human judgments with
//! gradient-boosted trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Aggregation, CaptionSample, Corpus};
use crate::embed_metrics::{
    clip_score, clip_score_ref, reference_key, EmbedError, EmbeddingStore, ScoreChannel,
    DEFAULT_CLIP_WEIGHT,
};
use crate::gbr::{self, BoostedEnsemble, FitReport, GbrError, Matrix, TrainConfig};
use crate::lexical::tokenize;
use crate::pool_metric::{
    build_pool, precision_recall, DetectionIndex, PoolConfig, PoolError, WordPool,
};

pub const MODEL_FORMAT: &str = "vcrscore-model";

#[derive(Debug, Error)]
pub enum VcrError {
    #[error("sample `{sample_id}`: missing {input}")]
    MissingInput { sample_id: String, input: String },
    #[error("sample `{sample_id}`: {source}")]
    Pool {
        sample_id: String,
        #[source]
        source: PoolError,
    },
    #[error("sample `{sample_id}`: {source}")]
    Embed {
        sample_id: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Gbr(#[from] GbrError),
    #[error("feature schema mismatch: model expects {expected:?}, got {got:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("target {value} at row {row} is outside [0, 1]")]
    TargetOutOfRange { row: usize, value: f64 },
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("corrupted model file: {0}")]
    Corrupted(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VcrError>;

/// Which CLIP-family score feeds the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipFeature {
    #[default]
    McipRef,
    Mcip,
    ClipRef,
    Clip,
}

impl ClipFeature {
    pub fn uses_references(self) -> bool {
        matches!(self, ClipFeature::McipRef | ClipFeature::ClipRef)
    }

    pub fn uses_mcip(self) -> bool {
        matches!(self, ClipFeature::McipRef | ClipFeature::Mcip)
    }

    pub fn feature_name(self) -> &'static str {
        match self {
            ClipFeature::McipRef => "mcipscore_ref",
            ClipFeature::Mcip => "mcipscore",
            ClipFeature::ClipRef => "clipscore_ref",
            ClipFeature::Clip => "clipscore",
        }
    }
}

impl FromStr for ClipFeature {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mcip-ref" | "mcipscore_ref" => Ok(ClipFeature::McipRef),
            "mcip" | "mcipscore" => Ok(ClipFeature::Mcip),
            "clip-ref" | "clipscore_ref" => Ok(ClipFeature::ClipRef),
            "clip" | "clipscore" => Ok(ClipFeature::Clip),
            other => Err(format!("unknown clip feature `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub clip_feature: ClipFeature,
    pub clip_weight: f64,
    pub vilt_channel: String,
    /// Additional scalar channels appended after the four core features.
    pub extra_channels: Vec<String>,
    pub pool: PoolConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            clip_feature: ClipFeature::McipRef,
            clip_weight: DEFAULT_CLIP_WEIGHT,
            vilt_channel: "vilt".into(),
            extra_channels: Vec::new(),
            pool: PoolConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn schema(&self) -> FeatureSchema {
        let mut names = vec![
            "precision".to_string(),
            "recall".to_string(),
            self.vilt_channel.clone(),
            self.clip_feature.feature_name().to_string(),
        ];
        names.extend(self.extra_channels.iter().cloned());
        FeatureSchema { names }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Read-only lookups shared by every sample.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    pub pools: &'a BTreeMap<String, WordPool>,
    /// Embedding family selected by the clip feature (MCIP or CLIP).
    pub embeddings: &'a EmbeddingStore,
    pub channels: &'a BTreeMap<String, ScoreChannel>,
}

/// One pool per image from the union of its samples' references and detections.
pub fn build_pools(
    corpus: &Corpus,
    detections: Option<&DetectionIndex>,
    config: PoolConfig,
) -> BTreeMap<String, WordPool> {
    let mut refs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in corpus {
        let entry = refs.entry(s.image_id.as_str()).or_default();
        for r in &s.references {
            if !entry.contains(&r.as_str()) {
                entry.push(r);
            }
        }
    }
    refs.into_iter()
        .map(|(image_id, texts)| {
            let tokens: Vec<_> = texts.iter().map(|t| tokenize(t)).collect();
            let dets = detections
                .and_then(|d| d.get(image_id))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            (
                image_id.to_string(),
                build_pool(image_id, &tokens, dets, config),
            )
        })
        .collect()
}

fn missing(sample: &CaptionSample, input: impl Into<String>) -> VcrError {
    VcrError::MissingInput {
        sample_id: sample.sample_id.clone(),
        input: input.into(),
    }
}

/// CLIP-family score of one sample from one embedding store.
pub fn clip_family_score(
    sample: &CaptionSample,
    store: &EmbeddingStore,
    with_references: bool,
    weight: f64,
) -> Result<f64> {
    let image = store
        .image
        .as_ref()
        .and_then(|t| t.vector(&sample.image_id))
        .ok_or_else(|| missing(sample, "image embedding"))?;
    let caption = store
        .caption
        .as_ref()
        .and_then(|t| t.vector(&sample.sample_id))
        .ok_or_else(|| missing(sample, "caption embedding"))?;
    let embed_err = |source| VcrError::Embed {
        sample_id: sample.sample_id.clone(),
        source,
    };
    if !with_references {
        return clip_score(image, caption, weight).map_err(embed_err);
    }
    let table = store
        .caption
        .as_ref()
        .ok_or_else(|| missing(sample, "caption embedding"))?;
    let refs = (0..sample.references.len())
        .map(|k| {
            table
                .vector(&reference_key(&sample.image_id, k))
                .ok_or_else(|| missing(sample, format!("reference embedding {k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    clip_score_ref(image, caption, &refs, weight).map_err(embed_err)
}

pub fn featurize(
    sample: &CaptionSample,
    inputs: &FeatureInputs<'_>,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    let pool = inputs
        .pools
        .get(&sample.image_id)
        .ok_or_else(|| missing(sample, "word pool"))?;
    let pr =
        precision_recall(&tokenize(&sample.candidate), pool).map_err(|source| VcrError::Pool {
            sample_id: sample.sample_id.clone(),
            source,
        })?;
    let channel_value = |name: &str| {
        inputs
            .channels
            .get(name)
            .and_then(|c| c.get(&sample.sample_id))
            .ok_or_else(|| missing(sample, name))
    };
    let vilt = channel_value(&config.vilt_channel)?;
    let clip = clip_family_score(
        sample,
        inputs.embeddings,
        config.clip_feature.uses_references(),
        config.clip_weight,
    )?;
    let mut values = vec![pr.precision, pr.recall, vilt, clip];
    for name in &config.extra_channels {
        values.push(channel_value(name)?);
    }
    Ok(FeatureVector {
        names: config.schema().names,
        values,
    })
}

/// Feature matrix for a whole corpus, rows in corpus order.
pub fn featurize_corpus(
    corpus: &Corpus,
    inputs: &FeatureInputs<'_>,
    config: &FeatureConfig,
) -> Result<(FeatureSchema, Matrix)> {
    let schema = config.schema();
    let mut data = Vec::with_capacity(corpus.len() * schema.len());
    for s in corpus {
        data.extend(featurize(s, inputs, config)?.values);
    }
    let m = Matrix::new(corpus.len(), schema.len(), data)?;
    Ok((schema, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcrModel {
    pub format: String,
    pub features: FeatureConfig,
    pub schema: FeatureSchema,
    pub clamp: bool,
    pub target: Aggregation,
    pub train_mse: Vec<f64>,
    pub model: serde_json::Value,
    #[serde(skip)]
    ensemble: Option<BoostedEnsemble>,
}

impl VcrModel {
    pub fn new(ensemble: BoostedEnsemble, features: FeatureConfig, train_mse: Vec<f64>) -> Self {
        VcrModel {
            format: MODEL_FORMAT.to_string(),
            schema: features.schema(),
            features,
            clamp: true,
            target: Aggregation::Mean,
            train_mse,
            model: ensemble.to_json_value(),
            ensemble: Some(ensemble),
        }
    }

    pub fn ensemble(&self) -> &BoostedEnsemble {
        self.ensemble
            .as_ref()
            .expect("ensemble decoded on construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("model serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut m: VcrModel =
            serde_json::from_slice(bytes).map_err(|e| VcrError::Corrupted(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(VcrError::Corrupted(format!(
                "unexpected format `{}`",
                m.format
            )));
        }
        if m.schema != m.features.schema() {
            return Err(VcrError::Corrupted(
                "schema does not match the feature configuration".into(),
            ));
        }
        let ensemble = BoostedEnsemble::from_json_value(m.model.clone())?;
        if ensemble.n_features != m.schema.len() {
            return Err(VcrError::Corrupted(format!(
                "schema has {} features but the ensemble expects {}",
                m.schema.len(),
                ensemble.n_features
            )));
        }
        m.ensemble = Some(ensemble);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Unclamped ensemble output for a vector in schema order.
    pub fn raw_predict(&self, values: &[f64]) -> Result<f64> {
        Ok(self.ensemble().predict_row(values)?)
    }
}

/// Fits the regressor on rows in the schema order of `feature_config` against
/// targets in [0, 1].
pub fn train_vcr(
    features: &Matrix,
    feature_config: &FeatureConfig,
    targets: &[f64],
    config: &TrainConfig,
) -> Result<VcrModel> {
    if features.rows() != targets.len() {
        return Err(VcrError::LengthMismatch {
            rows: features.rows(),
            targets: targets.len(),
        });
    }
    if let Some((row, &value)) = targets
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(VcrError::TargetOutOfRange { row, value });
    }
    let schema = feature_config.schema();
    if features.cols() != schema.len() {
        return Err(VcrError::SchemaMismatch {
            expected: schema.names,
            got: (0..features.cols())
                .map(|i| format!("column {i}"))
                .collect(),
        });
    }
    let FitReport {
        ensemble,
        train_mse,
        ..
    } = gbr::fit_traced(features, targets, config)?;
    Ok(VcrModel::new(ensemble, feature_config.clone(), train_mse))
}

/// Scores one feature vector; columns are matched to the model schema by name.
pub fn vcr_score(model: &VcrModel, features: &FeatureVector) -> Result<f64> {
    let mismatch = || VcrError::SchemaMismatch {
        expected: model.schema.names.clone(),
        got: features.names.clone(),
    };
    if features.names.len() != model.schema.len() || features.values.len() != features.names.len() {
        return Err(mismatch());
    }
    let ordered = model
        .schema
        .names
        .iter()
        .map(|n| features.get(n).ok_or_else(mismatch))
        .collect::<Result<Vec<_>>>()?;
    let raw = model.raw_predict(&ordered)?;
    Ok(if model.clamp {
        raw.clamp(0.0, 1.0)
    } else {
        raw
    })
}
