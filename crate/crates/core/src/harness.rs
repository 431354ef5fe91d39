//! Evaluation orchestration: every metric over a corpus, Spearman against
//! human judgments, model rankings and report files.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{rho_from_rank_differences, spearman_rho, AgreementError, PairedSeries};
use crate::corpus::{aggregate_sample, Aggregation, CaptionSample, Corpus, CorpusError};
use crate::embed_metrics::{
    bert_score_multi, reference_key, EmbeddingStore, ScoreChannel, DEFAULT_CLIP_WEIGHT,
};
use crate::lexical::{
    bleu4, cider, meteor, rouge_l, tokenize, CiderInput, TokenSeq, DEFAULT_ROUGE_BETA,
};
use crate::pool_metric::{precision_recall, DetectionIndex, PoolConfig, WordPool};
use crate::vcrscore::{
    build_pools, clip_family_score, featurize, vcr_score, FeatureInputs, VcrError, VcrModel,
};

/// Below this many samples a per-model correlation gets a warning.
pub const SMALL_N: usize = 30;
pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("metric `{metric}` needs {input}, which was not supplied")]
    MissingPrerequisite { metric: String, input: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("no human score for sample `{0}`")]
    MissingHuman(String),
    #[error("metric `{metric}` is constant over the compared samples")]
    Degenerate { metric: String },
    #[error("metric `{metric}`: only {n} samples have both a score and a human judgment")]
    InsufficientPairs { metric: String, n: usize },
    #[error("image `{image_id}` has no score for model `{model_id}`")]
    MissingCoverage { image_id: String, model_id: String },
    #[error("image `{image_id}` has more than one sample for model `{model_id}`")]
    DuplicateCoverage { image_id: String, model_id: String },
    #[error("ranking `{0}` is not over the same model set as the human ranking")]
    ModelSetMismatch(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vcr(#[from] VcrError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Bleu4,
    RougeL,
    Meteor,
    Cider,
    BertScore,
    ClipScore,
    ClipScoreRef,
    McipScore,
    McipScoreRef,
    Vilt,
    BertGrammar,
    Precision,
    Recall,
    VcrScore,
}

impl Metric {
    pub const ALL: [Metric; 14] = [
        Metric::Bleu4,
        Metric::RougeL,
        Metric::Meteor,
        Metric::Cider,
        Metric::BertScore,
        Metric::ClipScore,
        Metric::ClipScoreRef,
        Metric::McipScore,
        Metric::McipScoreRef,
        Metric::Vilt,
        Metric::BertGrammar,
        Metric::Precision,
        Metric::Recall,
        Metric::VcrScore,
    ];

    pub const LEXICAL: [Metric; 4] = [Metric::Bleu4, Metric::RougeL, Metric::Meteor, Metric::Cider];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu4 => "bleu4",
            Metric::RougeL => "rouge_l",
            Metric::Meteor => "meteor",
            Metric::Cider => "cider",
            Metric::BertScore => "bertscore",
            Metric::ClipScore => "clipscore",
            Metric::ClipScoreRef => "clipscore_ref",
            Metric::McipScore => "mcipscore",
            Metric::McipScoreRef => "mcipscore_ref",
            Metric::Vilt => "vilt",
            Metric::BertGrammar => "bertgrammar",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::VcrScore => "vcrscore",
        }
    }

    /// Parses a comma-separated list; `all` expands to every metric.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Metric::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| {
                m.name() == key
                    || (key == "bleu" && *m == Metric::Bleu4)
                    || (key == "rouge" && *m == Metric::RougeL)
            })
            .ok_or_else(|| HarnessError::UnknownMetric(s.to_string()))
    }
}

/// Everything the metric set may need besides the corpus.
#[derive(Debug, Clone)]
pub struct EvalInputs {
    pub clip: Option<EmbeddingStore>,
    pub mcip: Option<EmbeddingStore>,
    /// Contextual token embeddings for BERTScore: candidates keyed by sample
    /// id, references by `reference_key`.
    pub bert: Option<EmbeddingStore>,
    pub channels: BTreeMap<String, ScoreChannel>,
    pub detections: Option<DetectionIndex>,
    pub model: Option<VcrModel>,
    pub pool: PoolConfig,
    pub clip_weight: f64,
    pub rouge_beta: f64,
    pub human: Aggregation,
    pub seed: u64,
}

impl Default for EvalInputs {
    fn default() -> Self {
        EvalInputs {
            clip: None,
            mcip: None,
            bert: None,
            channels: BTreeMap::new(),
            detections: None,
            model: None,
            pool: PoolConfig::default(),
            clip_weight: DEFAULT_CLIP_WEIGHT,
            rouge_beta: DEFAULT_ROUGE_BETA,
            human: Aggregation::Mean,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub image_id: String,
    pub model_id: String,
    pub human: Option<f64>,
    pub scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeans {
    pub model_id: String,
    pub n: usize,
    pub human: Option<f64>,
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    pub rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub model_id: String,
    pub n: usize,
    pub rhos: Vec<Option<f64>>,
}

/// Models ordered best first by one metric's per-model mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRanking {
    pub metric: String,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingAgreement {
    pub metric: String,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewKind {
    VotingSum,
    MeanSum,
    TrimmedSum,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::VotingSum, ViewKind::MeanSum, ViewKind::TrimmedSum];

    pub fn name(self) -> &'static str {
        match self {
            ViewKind::VotingSum => "voting-sum",
            ViewKind::MeanSum => "mean-sum",
            ViewKind::TrimmedSum => "trimmed-sum",
        }
    }
}

impl FromStr for ViewKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "voting-sum" | "voting" | "vote" => Ok(ViewKind::VotingSum),
            "mean-sum" | "mean" => Ok(ViewKind::MeanSum),
            "trimmed-sum" | "trimmed" => Ok(ViewKind::TrimmedSum),
            other => Err(format!("unknown ranking view `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTotal {
    pub model_id: String,
    pub total: f64,
    /// `total * 100 / n_images`
    pub display: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingView {
    pub kind: ViewKind,
    pub n_images: usize,
    /// Declared model order.
    pub totals: Vec<ModelTotal>,
    /// Best first; equal totals keep declared order.
    pub ranking: Vec<String>,
    /// Groups of models with equal totals.
    pub ties: Vec<Vec<String>>,
}

impl RankingView {
    pub fn total(&self, model_id: &str) -> Option<f64> {
        self.totals
            .iter()
            .find(|t| t.model_id == model_id)
            .map(|t| t.total)
    }

    pub fn is_tied(&self) -> bool {
        !self.ties.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<String>,
    pub rows: Vec<SampleScores>,
    pub model_means: Vec<ModelMeans>,
    pub correlations: Vec<MetricCorrelation>,
    pub heatmap: Vec<HeatmapRow>,
    pub metric_rankings: Vec<MetricRanking>,
    pub human_ranking: Vec<String>,
    pub ranking_agreement: Vec<RankingAgreement>,
    pub views: Vec<RankingView>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn metric_index(&self, metric: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == metric)
    }

    pub fn column(&self, metric: &str) -> Option<Vec<Option<f64>>> {
        let i = self.metric_index(metric)?;
        Some(self.rows.iter().map(|r| r.scores[i]).collect())
    }

    pub fn correlation(&self, metric: &str) -> Option<f64> {
        self.correlations
            .iter()
            .find(|c| c.metric == metric)
            .and_then(|c| c.rho)
    }

    /// Metrics ordered by their Spearman against humans, best first.
    pub fn metrics_by_rho(&self) -> Vec<(String, f64)> {
        let mut out: Vec<_> = self
            .correlations
            .iter()
            .filter_map(|c| c.rho.map(|r| (c.metric.clone(), r)))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    /// Recomputes means, correlations, heatmap and rankings from the rows.
    /// Columns that cannot be correlated are left empty with a warning.
    pub fn summarize(&mut self) {
        self.model_means = model_means(&self.rows, self.metrics.len());
        let humans: BTreeMap<String, f64> = self
            .rows
            .iter()
            .filter_map(|r| r.human.map(|h| (r.sample_id.clone(), h)))
            .collect();
        let mut warnings = Vec::new();
        self.correlations = (0..self.metrics.len())
            .map(|i| {
                let metric = self.metrics[i].clone();
                match correlate_column(&self.rows, i, &metric, &humans, false) {
                    Ok((rho, n)) => MetricCorrelation {
                        metric,
                        rho: Some(rho),
                        n,
                    },
                    Err(e) => {
                        if !humans.is_empty() {
                            warnings.push(format!("{metric}: no correlation ({e})"));
                        }
                        let n = paired(&self.rows, i, &humans).0.len();
                        MetricCorrelation {
                            metric,
                            rho: None,
                            n,
                        }
                    }
                }
            })
            .collect();
        self.heatmap = self
            .model_means
            .iter()
            .map(|m| {
                let rows: Vec<SampleScores> = self
                    .rows
                    .iter()
                    .filter(|r| r.model_id == m.model_id)
                    .cloned()
                    .collect();
                if rows.len() < SMALL_N && !humans.is_empty() {
                    warnings.push(format!(
                        "heatmap: model `{}` has only {} samples",
                        m.model_id,
                        rows.len()
                    ));
                }
                HeatmapRow {
                    model_id: m.model_id.clone(),
                    n: rows.len(),
                    rhos: (0..self.metrics.len())
                        .map(|i| {
                            correlate_column(&rows, i, &self.metrics[i], &humans, false)
                                .ok()
                                .map(|x| x.0)
                        })
                        .collect(),
                }
            })
            .collect();
        self.metric_rankings = (0..self.metrics.len())
            .filter_map(|i| {
                let means: Option<Vec<(String, f64)>> = self
                    .model_means
                    .iter()
                    .map(|m| m.means[i].map(|v| (m.model_id.clone(), v)))
                    .collect();
                means.map(|means| MetricRanking {
                    metric: self.metrics[i].clone(),
                    models: order_desc(&means),
                })
            })
            .collect();
        let human_means: Option<Vec<(String, f64)>> = self
            .model_means
            .iter()
            .map(|m| m.human.map(|h| (m.model_id.clone(), h)))
            .collect();
        self.human_ranking = human_means.map(|h| order_desc(&h)).unwrap_or_default();
        self.ranking_agreement = if self.human_ranking.len() >= 2 {
            self.metric_rankings
                .iter()
                .map(|r| RankingAgreement {
                    metric: r.metric.clone(),
                    rho: position_spearman(&r.models, &self.human_ranking).ok(),
                })
                .collect()
        } else {
            Vec::new()
        };
        for w in warnings {
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
    }
}

fn order_desc(values: &[(String, f64)]) -> Vec<String> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].1.total_cmp(&values[a].1));
    order.into_iter().map(|i| values[i].0.clone()).collect()
}

fn model_means(rows: &[SampleScores], n_metrics: usize) -> Vec<ModelMeans> {
    let mut order: Vec<String> = Vec::new();
    let mut by_model: HashMap<&str, Vec<&SampleScores>> = HashMap::new();
    for r in rows {
        let entry = by_model.entry(r.model_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.model_id.clone());
        }
        entry.push(r);
    }
    let mean_of =
        |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    order
        .into_iter()
        .map(|model_id| {
            let rs = &by_model[model_id.as_str()];
            ModelMeans {
                n: rs.len(),
                human: mean_of(rs.iter().filter_map(|r| r.human).collect()),
                means: (0..n_metrics)
                    .map(|i| mean_of(rs.iter().filter_map(|r| r.scores[i]).collect()))
                    .collect(),
                model_id,
            }
        })
        .collect()
}

fn paired(
    rows: &[SampleScores],
    idx: usize,
    humans: &BTreeMap<String, f64>,
) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter_map(|r| Some((r.scores[idx]?, *humans.get(&r.sample_id)?)))
        .unzip()
}

fn correlate_column(
    rows: &[SampleScores],
    idx: usize,
    metric: &str,
    humans: &BTreeMap<String, f64>,
    strict: bool,
) -> Result<(f64, usize)> {
    if strict {
        if let Some(r) = rows.iter().find(|r| !humans.contains_key(&r.sample_id)) {
            return Err(HarnessError::MissingHuman(r.sample_id.clone()));
        }
    }
    let (x, y) = paired(rows, idx, humans);
    let n = x.len();
    if n < 2 {
        return Err(HarnessError::InsufficientPairs {
            metric: metric.to_string(),
            n,
        });
    }
    let series = PairedSeries::new(x, y)?;
    match spearman_rho(&series) {
        Ok(rho) => Ok((rho, n)),
        Err(AgreementError::ZeroVariance) => Err(HarnessError::Degenerate {
            metric: metric.to_string(),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Spearman of every metric column against the given human scores. Every
/// report sample needs a human score and no column may be constant.
pub fn correlate_with_humans(
    report: &MetricReport,
    humans: &BTreeMap<String, f64>,
) -> Result<Vec<MetricCorrelation>> {
    report
        .metrics
        .iter()
        .enumerate()
        .map(|(i, metric)| {
            let (rho, n) = correlate_column(&report.rows, i, metric, humans, true)?;
            Ok(MetricCorrelation {
                metric: metric.clone(),
                rho: Some(rho),
                n,
            })
        })
        .collect()
}

/// Human scores of a report's rows keyed by sample id.
pub fn human_scores(report: &MetricReport) -> BTreeMap<String, f64> {
    report
        .rows
        .iter()
        .filter_map(|r| r.human.map(|h| (r.sample_id.clone(), h)))
        .collect()
}

fn check_prerequisites(metrics: &[Metric], inputs: &EvalInputs) -> Result<()> {
    let need = |metric: Metric, input: &str| HarnessError::MissingPrerequisite {
        metric: metric.name().to_string(),
        input: input.to_string(),
    };
    for &m in metrics {
        match m {
            Metric::BertScore if inputs.bert.as_ref().is_none_or(|b| b.tokens.is_none()) => {
                return Err(need(m, "token embeddings"))
            }
            Metric::ClipScore | Metric::ClipScoreRef if inputs.clip.is_none() => {
                return Err(need(m, "CLIP embeddings"))
            }
            Metric::McipScore | Metric::McipScoreRef if inputs.mcip.is_none() => {
                return Err(need(m, "MCIP embeddings"))
            }
            Metric::Vilt | Metric::BertGrammar if !inputs.channels.contains_key(m.name()) => {
                return Err(need(m, &format!("the `{}` channel", m.name())))
            }
            Metric::VcrScore => {
                let model = inputs
                    .model
                    .as_ref()
                    .ok_or_else(|| need(m, "a trained model file"))?;
                let f = &model.features;
                let store = if f.clip_feature.uses_mcip() {
                    &inputs.mcip
                } else {
                    &inputs.clip
                };
                if store.is_none() {
                    let family = if f.clip_feature.uses_mcip() {
                        "MCIP"
                    } else {
                        "CLIP"
                    };
                    return Err(need(m, &format!("{family} embeddings")));
                }
                for ch in std::iter::once(&f.vilt_channel).chain(&f.extra_channels) {
                    if !inputs.channels.contains_key(ch) {
                        return Err(need(m, &format!("the `{ch}` channel")));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Metrics whose inputs are all present, in `Metric::ALL` order.
pub fn available_metrics(inputs: &EvalInputs) -> Vec<Metric> {
    Metric::ALL
        .into_iter()
        .filter(|m| check_prerequisites(&[*m], inputs).is_ok())
        .collect()
}

struct Shared<'a> {
    inputs: &'a EvalInputs,
    pools: BTreeMap<String, WordPool>,
    model_pools: BTreeMap<String, WordPool>,
    empty: EmbeddingStore,
}

fn bert_f1(sample: &CaptionSample, store: &EmbeddingStore) -> Option<f64> {
    let table = store.tokens.as_ref()?;
    let cand = table.matrix(&sample.sample_id)?;
    let refs: Option<Vec<_>> = (0..sample.references.len())
        .map(|k| table.matrix(&reference_key(&sample.image_id, k)))
        .collect();
    bert_score_multi(cand, &refs?).ok().map(|b| b.f1)
}

fn score_sample(
    sample: &CaptionSample,
    metric: Metric,
    cand: &TokenSeq,
    refs: &[TokenSeq],
    sh: &Shared<'_>,
) -> Option<f64> {
    let inputs = sh.inputs;
    let channel = |name: &str| {
        inputs
            .channels
            .get(name)
            .and_then(|c| c.get(&sample.sample_id))
    };
    match metric {
        Metric::Bleu4 => bleu4(cand, refs).ok(),
        Metric::RougeL => rouge_l(cand, refs, inputs.rouge_beta).ok(),
        Metric::Meteor => meteor(cand, refs).ok(),
        Metric::Cider => None,
        Metric::BertScore => bert_f1(sample, inputs.bert.as_ref()?),
        Metric::ClipScore | Metric::ClipScoreRef => clip_family_score(
            sample,
            inputs.clip.as_ref()?,
            metric == Metric::ClipScoreRef,
            inputs.clip_weight,
        )
        .ok(),
        Metric::McipScore | Metric::McipScoreRef => clip_family_score(
            sample,
            inputs.mcip.as_ref()?,
            metric == Metric::McipScoreRef,
            inputs.clip_weight,
        )
        .ok(),
        Metric::Vilt | Metric::BertGrammar => channel(metric.name()),
        Metric::Precision | Metric::Recall => {
            let pr = precision_recall(cand, sh.pools.get(&sample.image_id)?).ok()?;
            Some(if metric == Metric::Precision {
                pr.precision
            } else {
                pr.recall
            })
        }
        Metric::VcrScore => {
            let model = inputs.model.as_ref()?;
            let store = if model.features.clip_feature.uses_mcip() {
                &inputs.mcip
            } else {
                &inputs.clip
            };
            let fi = FeatureInputs {
                pools: &sh.model_pools,
                embeddings: store.as_ref().unwrap_or(&sh.empty),
                channels: &inputs.channels,
            };
            let fv = featurize(sample, &fi, &model.features).ok()?;
            vcr_score(model, &fv).ok()
        }
    }
}

/// Scores every sample under every requested metric. Per-sample gaps (a
/// missing embedding, a sample without references) leave an absent cell;
/// a missing input for a whole metric is an error.
pub fn evaluate_corpus(
    corpus: &Corpus,
    metrics: &[Metric],
    inputs: &EvalInputs,
) -> Result<MetricReport> {
    check_prerequisites(metrics, inputs)?;
    let model_pool = inputs.model.as_ref().map(|m| m.features.pool);
    let pools = build_pools(corpus, inputs.detections.as_ref(), inputs.pool);
    let shared = Shared {
        inputs,
        model_pools: match model_pool {
            Some(p) if p != inputs.pool => build_pools(corpus, inputs.detections.as_ref(), p),
            _ => pools.clone(),
        },
        pools,
        empty: EmbeddingStore::default(),
    };
    let tokenized: Vec<(TokenSeq, Vec<TokenSeq>)> = corpus
        .samples()
        .par_iter()
        .map(|s| {
            (
                tokenize(&s.candidate),
                s.references.iter().map(|r| tokenize(r)).collect(),
            )
        })
        .collect();
    let mut rows: Vec<SampleScores> = corpus
        .samples()
        .par_iter()
        .zip(tokenized.par_iter())
        .map(|(s, (cand, refs))| {
            let human = aggregate_sample(s, inputs.seed)
                .ok()
                .map(|a| a.get(inputs.human));
            SampleScores {
                sample_id: s.sample_id.clone(),
                image_id: s.image_id.clone(),
                model_id: s.model_id.clone(),
                human,
                scores: metrics
                    .iter()
                    .map(|&m| score_sample(s, m, cand, refs, &shared))
                    .collect(),
            }
        })
        .collect();
    let mut warnings = Vec::new();
    if let Some(ci) = metrics.iter().position(|&m| m == Metric::Cider) {
        let with_refs: Vec<usize> = (0..rows.len())
            .filter(|&i| !tokenized[i].1.is_empty())
            .collect();
        let cider_inputs: Vec<CiderInput> = with_refs
            .iter()
            .map(|&i| CiderInput {
                image_id: corpus.samples()[i].image_id.clone(),
                candidate: tokenized[i].0.clone(),
                references: tokenized[i].1.clone(),
            })
            .collect();
        let out = cider(&cider_inputs);
        if out.degenerate {
            warnings.push(
                "cider: degenerate idf (fewer than two images with references); column absent"
                    .to_string(),
            );
        } else {
            for (&i, v) in with_refs.iter().zip(out.scores) {
                rows[i].scores[ci] = Some(v);
            }
        }
    }
    for (i, m) in metrics.iter().enumerate() {
        let absent = rows.iter().filter(|r| r.scores[i].is_none()).count();
        if absent > 0 && !(*m == Metric::Cider && absent == rows.len() && !warnings.is_empty()) {
            warnings.push(format!("{m}: {absent} of {} samples absent", rows.len()));
        }
    }
    let mut report = MetricReport {
        metrics: metrics.iter().map(|m| m.name().to_string()).collect(),
        rows,
        warnings,
        ..Default::default()
    };
    report.summarize();
    Ok(report)
}

/// Sums per-image human scores per model under one aggregation view.
/// `models` fixes the declared order; by default the corpus order is used.
pub fn rank_models(
    corpus: &Corpus,
    view: ViewKind,
    seed: u64,
    models: Option<&[String]>,
) -> Result<RankingView> {
    let models: Vec<String> = models
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| corpus.model_ids());
    let method = if view == ViewKind::VotingSum {
        Aggregation::Vote
    } else {
        Aggregation::Mean
    };
    let mut grid: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for s in corpus {
        let Some(j) = models.iter().position(|m| *m == s.model_id) else {
            continue;
        };
        let cell = &mut grid
            .entry(s.image_id.as_str())
            .or_insert_with(|| vec![None; models.len()])[j];
        if cell.is_some() {
            return Err(HarnessError::DuplicateCoverage {
                image_id: s.image_id.clone(),
                model_id: s.model_id.clone(),
            });
        }
        *cell = Some(aggregate_sample(s, seed)?.get(method));
    }
    let mut totals = vec![0.0; models.len()];
    for (image_id, cells) in &grid {
        let mut values = Vec::with_capacity(cells.len());
        for (j, c) in cells.iter().enumerate() {
            values.push(c.ok_or_else(|| HarnessError::MissingCoverage {
                image_id: image_id.to_string(),
                model_id: models[j].clone(),
            })?);
        }
        let mut keep = vec![true; values.len()];
        if view == ViewKind::TrimmedSum && !values.is_empty() {
            let mut max_j = 0;
            let mut min_j = values.len() - 1;
            for (j, &v) in values.iter().enumerate() {
                if v > values[max_j] {
                    max_j = j;
                }
                if v <= values[min_j] && (v < values[min_j] || j > min_j) {
                    min_j = j;
                }
            }
            keep[max_j] = false;
            keep[min_j] = false;
        }
        for (j, v) in values.into_iter().enumerate() {
            if keep[j] {
                totals[j] += v;
            }
        }
    }
    let n_images = grid.len();
    let scale = if n_images == 0 {
        0.0
    } else {
        100.0 / n_images as f64
    };
    let totals: Vec<ModelTotal> = models
        .iter()
        .zip(totals)
        .map(|(m, total)| ModelTotal {
            model_id: m.clone(),
            total,
            display: total * scale,
        })
        .collect();
    let pairs: Vec<(String, f64)> = totals
        .iter()
        .map(|t| (t.model_id.clone(), t.total))
        .collect();
    let ranking = order_desc(&pairs);
    let mut ties: Vec<Vec<String>> = Vec::new();
    let mut k = 0;
    while k < ranking.len() {
        let base = pairs
            .iter()
            .find(|p| p.0 == ranking[k])
            .map(|p| p.1)
            .unwrap_or(0.0);
        let mut group = vec![ranking[k].clone()];
        let mut e = k + 1;
        while e < ranking.len() {
            let v = pairs
                .iter()
                .find(|p| p.0 == ranking[e])
                .map(|p| p.1)
                .unwrap_or(0.0);
            if (v - base).abs() > 1e-9 * base.abs().max(1.0) {
                break;
            }
            group.push(ranking[e].clone());
            e += 1;
        }
        if group.len() > 1 {
            ties.push(group);
        }
        k = e;
    }
    Ok(RankingView {
        kind: view,
        n_images,
        totals,
        ranking,
        ties,
    })
}

/// Spearman between two rankings of the same model set, on positions.
pub fn position_spearman(
    ranking: &[String],
    reference: &[String],
) -> std::result::Result<f64, String> {
    if ranking.len() != reference.len() || ranking.len() < 2 {
        return Err("rankings differ in length or have fewer than two models".into());
    }
    let mut rx = Vec::with_capacity(ranking.len());
    let mut ry = Vec::with_capacity(ranking.len());
    for (i, m) in reference.iter().enumerate() {
        let j = ranking
            .iter()
            .position(|x| x == m)
            .ok_or_else(|| format!("model `{m}` missing"))?;
        ry.push(i as f64);
        rx.push(j as f64);
    }
    if ranking.iter().any(|m| !reference.contains(m)) {
        return Err("model sets differ".into());
    }
    Ok(rho_from_rank_differences(&rx, &ry))
}

pub fn ranking_correlation(
    rankings: &[MetricRanking],
    human: &[String],
) -> Result<Vec<RankingAgreement>> {
    rankings
        .iter()
        .map(|r| {
            let rho = position_spearman(&r.models, human)
                .map_err(|_| HarnessError::ModelSetMismatch(r.metric.clone()))?;
            Ok(RankingAgreement {
                metric: r.metric.clone(),
                rho: Some(rho),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub model_id: String,
    pub metric: String,
    pub below: usize,
    pub counts: Vec<usize>,
    pub above: usize,
}

/// Uniform bins over [0, 1] per model and metric; 1.0 falls in the last bin.
pub fn histograms(report: &MetricReport, bins: usize) -> Vec<Histogram> {
    let bins = bins.max(1);
    let mut out = Vec::new();
    for m in &report.model_means {
        for (i, metric) in report.metrics.iter().enumerate() {
            let mut h = Histogram {
                model_id: m.model_id.clone(),
                metric: metric.clone(),
                below: 0,
                counts: vec![0; bins],
                above: 0,
            };
            for v in report
                .rows
                .iter()
                .filter(|r| r.model_id == m.model_id)
                .filter_map(|r| r.scores[i])
            {
                if v < 0.0 {
                    h.below += 1;
                } else if v > 1.0 {
                    h.above += 1;
                } else {
                    h.counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
                }
            }
            out.push(h);
        }
    }
    out
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub const REPORT_JSON: &str = "report.json";

/// Writes `report.json` (the round-trip source) and CSV tables for scores,
/// per-model means, correlations, the heatmap, rankings and histograms.
pub fn emit_report(
    report: &MetricReport,
    dir: impl AsRef<Path>,
    bins: usize,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    let p = dir.join(REPORT_JSON);
    fs::write(&p, json)?;
    written.push(p);

    let with_metrics = |lead: &[&str]| {
        let mut h = strings(lead);
        h.extend(report.metrics.iter().cloned());
        h
    };

    let p = dir.join("scores.csv");
    write_csv(
        &p,
        &with_metrics(&["sample_id", "image_id", "model_id", "human"]),
        report.rows.iter().map(|r| {
            let mut row = vec![
                r.sample_id.clone(),
                r.image_id.clone(),
                r.model_id.clone(),
                cell(r.human),
            ];
            row.extend(r.scores.iter().map(|&v| cell(v)));
            row
        }),
    )?;
    written.push(p);

    let p = dir.join("model_means.csv");
    write_csv(
        &p,
        &with_metrics(&["model_id", "n", "human"]),
        report.model_means.iter().map(|m| {
            let mut row = vec![m.model_id.clone(), m.n.to_string(), cell(m.human)];
            row.extend(m.means.iter().map(|&v| cell(v)));
            row
        }),
    )?;
    written.push(p);

    let p = dir.join("correlation.csv");
    write_csv(
        &p,
        &strings(&["metric", "rho", "n", "ranking_rho"]),
        report.correlations.iter().map(|c| {
            let rr = report
                .ranking_agreement
                .iter()
                .find(|r| r.metric == c.metric)
                .and_then(|r| r.rho);
            vec![c.metric.clone(), cell(c.rho), c.n.to_string(), cell(rr)]
        }),
    )?;
    written.push(p);

    let p = dir.join("heatmap.csv");
    write_csv(
        &p,
        &with_metrics(&["model_id", "n"]),
        report.heatmap.iter().map(|h| {
            let mut row = vec![h.model_id.clone(), h.n.to_string()];
            row.extend(h.rhos.iter().map(|&v| cell(v)));
            row
        }),
    )?;
    written.push(p);

    let p = dir.join("rankings.csv");
    let mut rank_rows = Vec::new();
    for (pos, m) in report.human_ranking.iter().enumerate() {
        rank_rows.push(vec![
            "human".into(),
            (pos + 1).to_string(),
            m.clone(),
            String::new(),
            String::new(),
        ]);
    }
    for r in &report.metric_rankings {
        for (pos, m) in r.models.iter().enumerate() {
            rank_rows.push(vec![
                r.metric.clone(),
                (pos + 1).to_string(),
                m.clone(),
                String::new(),
                String::new(),
            ]);
        }
    }
    for v in &report.views {
        for (pos, m) in v.ranking.iter().enumerate() {
            let t = v.totals.iter().find(|t| &t.model_id == m);
            rank_rows.push(vec![
                v.kind.name().to_string(),
                (pos + 1).to_string(),
                m.clone(),
                cell(t.map(|t| t.total)),
                cell(t.map(|t| t.display)),
            ]);
        }
    }
    write_csv(
        &p,
        &strings(&["ranking", "position", "model_id", "total", "display"]),
        rank_rows,
    )?;
    written.push(p);

    let p = dir.join("histograms.csv");
    let mut header = strings(&["model_id", "metric", "below"]);
    let bins = bins.max(1);
    header.extend((0..bins).map(|b| {
        format!(
            "{:.2}-{:.2}",
            b as f64 / bins as f64,
            (b + 1) as f64 / bins as f64
        )
    }));
    header.push("above".into());
    write_csv(
        &p,
        &header,
        histograms(report, bins).into_iter().map(|h| {
            let mut row = vec![h.model_id, h.metric, h.below.to_string()];
            row.extend(h.counts.iter().map(usize::to_string));
            row.push(h.above.to_string());
            row
        }),
    )?;
    written.push(p);
    Ok(written)
}

pub fn load_report(dir: impl AsRef<Path>) -> Result<MetricReport> {
    Ok(serde_json::from_slice(&fs::read(
        dir.as_ref().join(REPORT_JSON),
    )?)?)
}

/// Metric by report correlation table, one column per labelled report (e.g.
/// own test split and external test split).
pub fn correlation_table(reports: &[(&str, &MetricReport)]) -> String {
    let mut metrics: Vec<String> = Vec::new();
    for (_, r) in reports {
        for m in &r.metrics {
            if !metrics.contains(m) {
                metrics.push(m.clone());
            }
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["metric".to_string()];
    header.extend(reports.iter().map(|(l, _)| l.to_string()));
    w.write_record(&header).expect("in-memory write");
    for m in &metrics {
        let mut row = vec![m.clone()];
        row.extend(reports.iter().map(|(_, r)| cell(r.correlation(m))));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RawScore;

    fn sample(id: &str, image: &str, model: &str, cand: &str, scores: &[f64]) -> CaptionSample {
        CaptionSample {
            sample_id: id.into(),
            image_id: image.into(),
            model_id: model.into(),
            candidate: cand.into(),
            references: vec![
                "a dog runs on the grass".into(),
                "a brown dog in a field".into(),
            ],
            source: "own".into(),
            raw_scores: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| RawScore {
                    tagger: format!("t{i}"),
                    phase: 1,
                    score,
                })
                .collect(),
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!(
            Metric::parse_list("bleu4, cider").unwrap(),
            vec![Metric::Bleu4, Metric::Cider]
        );
        assert!("spice".parse::<Metric>().is_err());
    }

    #[test]
    fn cider_on_single_sample_is_absent() {
        let c = Corpus::new(vec![sample("s1", "i1", "m", "a dog", &[0.5])]).unwrap();
        let r =
            evaluate_corpus(&c, &[Metric::Cider, Metric::Bleu4], &EvalInputs::default()).unwrap();
        assert_eq!(r.rows[0].scores[0], None);
        assert!(r.rows[0].scores[1].is_some());
        assert!(r.warnings.iter().any(|w| w.contains("degenerate")));
    }

    #[test]
    fn missing_prerequisites_are_errors() {
        let c = Corpus::new(vec![sample("s1", "i1", "m", "a dog", &[0.5])]).unwrap();
        for m in [
            Metric::Vilt,
            Metric::McipScoreRef,
            Metric::BertScore,
            Metric::VcrScore,
        ] {
            assert!(matches!(
                evaluate_corpus(&c, &[m], &EvalInputs::default()),
                Err(HarnessError::MissingPrerequisite { .. })
            ));
        }
    }

    #[test]
    fn per_sample_gaps_are_absent_not_zero() {
        let c = Corpus::new(vec![
            sample("s1", "i1", "m", "a dog", &[0.5]),
            sample("s2", "i1", "n", "a cat", &[0.25]),
        ])
        .unwrap();
        let mut vilt = ScoreChannel::new("vilt");
        vilt.insert("s1", 0.7).unwrap();
        let inputs = EvalInputs {
            channels: BTreeMap::from([("vilt".to_string(), vilt)]),
            ..Default::default()
        };
        let r = evaluate_corpus(&c, &[Metric::Vilt], &inputs).unwrap();
        assert_eq!(r.column("vilt").unwrap(), vec![Some(0.7), None]);
        assert_eq!(r.model_means[1].means[0], None);
    }

    #[test]
    fn model_means_are_arithmetic_means() {
        let c = Corpus::new(vec![
            sample("s1", "i1", "m", "a dog runs", &[0.5]),
            sample("s2", "i2", "m", "a cat sits", &[0.25]),
            sample("s3", "i1", "n", "grass", &[1.0]),
        ])
        .unwrap();
        let r = evaluate_corpus(
            &c,
            &[Metric::Precision, Metric::RougeL],
            &EvalInputs::default(),
        )
        .unwrap();
        let col = r.column("rouge_l").unwrap();
        assert_eq!(
            r.model_means[0].means[1],
            Some((col[0].unwrap() + col[1].unwrap()) / 2.0)
        );
        assert_eq!(r.model_means[0].human, Some(0.375));
        assert_eq!(r.model_means.len(), 2);
    }

    fn report_with(metric: Vec<f64>, human: Vec<f64>) -> MetricReport {
        let rows = metric
            .iter()
            .zip(&human)
            .enumerate()
            .map(|(i, (&m, &h))| SampleScores {
                sample_id: format!("s{i}"),
                image_id: format!("i{i}"),
                model_id: "m".into(),
                human: Some(h),
                scores: vec![Some(m)],
            })
            .collect();
        let mut r = MetricReport {
            metrics: names(&["x"]),
            rows,
            ..Default::default()
        };
        r.summarize();
        r
    }

    #[test]
    fn correlation_identity_and_negation() {
        let h = vec![0.1, 0.5, 0.3, 0.9, 0.7];
        let r = report_with(h.clone(), h.clone());
        assert_eq!(
            correlate_with_humans(&r, &human_scores(&r)).unwrap()[0].rho,
            Some(1.0)
        );
        let r = report_with(h.iter().map(|v| -v).collect(), h.clone());
        assert_eq!(
            correlate_with_humans(&r, &human_scores(&r)).unwrap()[0].rho,
            Some(-1.0)
        );
    }

    #[test]
    fn constant_column_is_an_error() {
        let r = report_with(vec![0.5; 4], vec![0.1, 0.2, 0.3, 0.4]);
        assert!(matches!(
            correlate_with_humans(&r, &human_scores(&r)),
            Err(HarnessError::Degenerate { .. })
        ));
        assert_eq!(r.correlations[0].rho, None);
    }

    #[test]
    fn missing_human_is_an_error() {
        let r = report_with(vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]);
        let mut h = human_scores(&r);
        h.remove("s1");
        assert!(matches!(
            correlate_with_humans(&r, &h),
            Err(HarnessError::MissingHuman(_))
        ));
    }

    #[test]
    fn position_correlation_cases() {
        let human = names(&["humans", "ofa", "blip2", "m2", "convcap", "saat"]);
        assert_eq!(position_spearman(&human, &human).unwrap(), 1.0);
        let swapped = names(&["humans", "ofa", "m2", "blip2", "convcap", "saat"]);
        assert!(
            (position_spearman(&swapped, &human).unwrap() - (1.0 - 12.0 / 210.0)).abs() < 1e-12
        );
        let rev: Vec<String> = human.iter().rev().cloned().collect();
        assert_eq!(position_spearman(&rev, &human).unwrap(), -1.0);
        let other = vec![MetricRanking {
            metric: "x".into(),
            models: names(&["humans", "ofa", "blip2", "m2", "convcap", "other"]),
        }];
        assert!(matches!(
            ranking_correlation(&other, &human),
            Err(HarnessError::ModelSetMismatch(_))
        ));
    }

    fn grid_corpus(scores: &[(&str, &str, f64)]) -> Corpus {
        Corpus::new(
            scores
                .iter()
                .enumerate()
                .map(|(k, &(img, model, s))| sample(&format!("s{k}"), img, model, "a dog", &[s]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_scores_flag_a_tie() {
        let c = grid_corpus(&[
            ("i1", "a", 0.5),
            ("i1", "b", 0.5),
            ("i2", "a", 0.75),
            ("i2", "b", 0.75),
        ]);
        let v = rank_models(&c, ViewKind::MeanSum, 0, None).unwrap();
        assert!(v.is_tied());
        assert_eq!(v.ties, vec![names(&["a", "b"])]);
        assert_eq!(v.total("a"), Some(1.25));
        assert_eq!(v.totals[0].display, 62.5);
    }

    #[test]
    fn trimmed_sum_drops_one_max_and_one_min() {
        let c = grid_corpus(&[
            ("i1", "a", 1.0),
            ("i1", "b", 0.5),
            ("i1", "c", 0.25),
            ("i1", "d", 1.0),
            ("i2", "a", 0.5),
            ("i2", "b", 0.5),
            ("i2", "c", 0.5),
            ("i2", "d", 0.5),
        ]);
        let v = rank_models(&c, ViewKind::TrimmedSum, 0, None).unwrap();
        // i1 drops a (first max) and c; i2 drops a (first max) and d (last min)
        assert_eq!(v.total("a"), Some(0.0));
        assert_eq!(v.total("b"), Some(1.0));
        assert_eq!(v.total("c"), Some(0.5));
        assert_eq!(v.total("d"), Some(1.0));
    }

    #[test]
    fn missing_coverage_is_an_error() {
        let c = grid_corpus(&[("i1", "a", 0.5), ("i1", "b", 0.5), ("i2", "a", 0.75)]);
        assert!(matches!(
            rank_models(&c, ViewKind::VotingSum, 0, None),
            Err(HarnessError::MissingCoverage { .. })
        ));
    }

    #[test]
    fn histogram_edges() {
        let r = report_with(
            vec![0.0, 0.05, 1.0, 1.5, -0.1],
            vec![0.1, 0.2, 0.3, 0.4, 0.5],
        );
        let h = &histograms(&r, 20)[0];
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!((h.below, h.above), (1, 1));
    }

    #[test]
    fn emit_round_trips_and_is_deterministic() {
        let r = report_with(vec![0.2, 0.4, 0.1, 0.8], vec![0.25, 0.5, 0.0, 1.0]);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = emit_report(&r, a.path(), DEFAULT_BINS).unwrap();
        emit_report(&r, b.path(), DEFAULT_BINS).unwrap();
        assert_eq!(load_report(a.path()).unwrap(), r);
        for f in files {
            let name = f.file_name().unwrap();
            assert_eq!(
                fs::read(&f).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn empty_metric_set_gives_header_only_tables() {
        let c = Corpus::new(vec![sample("s1", "i1", "m", "a dog", &[0.5])]).unwrap();
        let r = evaluate_corpus(&c, &[], &EvalInputs::default()).unwrap();
        let d = tempfile::tempdir().unwrap();
        emit_report(&r, d.path(), DEFAULT_BINS).unwrap();
        for f in ["correlation.csv", "histograms.csv"] {
            assert_eq!(
                fs::read_to_string(d.path().join(f))
                    .unwrap()
                    .lines()
                    .count(),
                1,
                "{f}"
            );
        }
    }

    #[test]
    fn correlation_table_shape() {
        let own = report_with(vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]);
        let ext = report_with(vec![0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3]);
        assert_eq!(
            correlation_table(&[("own", &own), ("external", &ext)]),
            "metric,own,external\nx,1,-1\n"
        );
    }
}
