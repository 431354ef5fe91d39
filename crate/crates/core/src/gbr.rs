//! Gradient-boosted regression trees with squared-error loss.
//!
//! `F0 = mean(y)`; every stage fits a depth-limited regression tree to the
//! current residuals and adds it with shrinkage `learning_rate`. Leaves hold
//! plain residual means. Split thresholds are midpoints between consecutive
//! distinct feature values; SSE ties go to the lowest feature index, then the
//! lowest threshold, which makes fitting fully deterministic.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

pub const FORMAT_VERSION: u32 = 1;
pub const LOSS_NAME: &str = "squared_error";

#[derive(Debug, Error, PartialEq)]
pub enum GbrError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("feature matrix has no columns")]
    NoFeatures,
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("ragged matrix: row {row} has {got} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model payload version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("corrupted model payload: {0}")]
    Corrupted(String),
}

pub type Result<T> = std::result::Result<T, GbrError>;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GbrError::Ragged {
                row: 0,
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(GbrError::Ragged {
                    row: i,
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    /// Fraction of rows held out for validation.
    pub validation_fraction: f64,
    /// Stop after this many stages without validation improvement.
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_estimators: 500,
            learning_rate: 0.05,
            max_depth: 3,
            min_samples_leaf: 5,
            subsample: 1.0,
            seed: 0,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GbrError::Config(m.to_string()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be positive");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) || es.patience == 0 {
                return bad("early stopping needs a fraction in (0, 1) and positive patience");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree; `nodes[0]` is the root, rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Best split of a node, as found by [`best_split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Summed squared error of both children around their own means.
    pub sse: f64,
}

/// Relative tolerance under which two SSE values count as tied.
pub const SSE_TIE_TOLERANCE: f64 = 1e-12;

pub(crate) fn improves(candidate: f64, best: f64) -> bool {
    candidate < best - SSE_TIE_TOLERANCE * best.abs().max(1.0)
}

/// Exact best split of `rows` for `targets` over all features, honoring the
/// minimum leaf size. `None` when no admissible split exists.
pub fn best_split(
    x: &Matrix,
    targets: &[f64],
    rows: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * min_samples_leaf.max(1) {
        return None;
    }
    // centering keeps the running-sum SSE well conditioned
    let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / n as f64;
    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for feature in 0..x.cols() {
        order.sort_by(|&a, &b| {
            x.get(a, feature)
                .total_cmp(&x.get(b, feature))
                .then(a.cmp(&b))
        });
        let total: f64 = order.iter().map(|&i| targets[i] - mean).sum();
        let total_sq: f64 = order.iter().map(|&i| (targets[i] - mean).powi(2)).sum();
        let (mut s, mut sq) = (0.0, 0.0);
        for k in 1..n {
            let prev = order[k - 1];
            let r = targets[prev] - mean;
            s += r;
            sq += r * r;
            let lo = x.get(prev, feature);
            let hi = x.get(order[k], feature);
            if lo == hi || k < min_samples_leaf || n - k < min_samples_leaf {
                continue;
            }
            let (nl, nr) = (k as f64, (n - k) as f64);
            let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
            let sse = sse.max(0.0);
            if best.is_none_or(|b| improves(sse, b.sse)) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    sse,
                });
            }
        }
    }
    best
}

fn sse_around_mean(targets: &[f64], rows: &[usize]) -> (f64, f64) {
    let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / rows.len() as f64;
    let sse = rows.iter().map(|&i| (targets[i] - mean).powi(2)).sum();
    (mean, sse)
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    targets: &'a [f64],
    max_depth: usize,
    min_samples_leaf: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let (mean, sse) = sse_around_mean(self.targets, rows);
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.max_depth {
            return id;
        }
        let Some(split) = best_split(self.x, self.targets, rows, self.min_samples_leaf) else {
            return id;
        };
        if !improves(split.sse, sse) {
            return id;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
        let left = self.build(&left_rows, depth + 1);
        let right = self.build(&right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Fits one regression tree to `targets` over `rows`.
pub fn fit_tree(
    x: &Matrix,
    targets: &[f64],
    rows: &[usize],
    max_depth: usize,
    min_samples_leaf: usize,
) -> RegressionTree {
    let mut b = TreeBuilder {
        x,
        targets,
        max_depth,
        min_samples_leaf,
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    RegressionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    #[serde(rename = "F0")]
    pub init: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub loss: String,
    pub config: TrainConfig,
    pub trees: Vec<RegressionTree>,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    version: u32,
    #[serde(flatten)]
    ensemble: BoostedEnsemble,
}

/// Training result with the per-stage training MSE (`trace[0]` is the MSE of
/// the constant `F0` model).
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub ensemble: BoostedEnsemble,
    pub train_mse: Vec<f64>,
    pub validation_mse: Option<Vec<f64>>,
}

fn check_inputs(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(GbrError::LengthMismatch {
            rows: x.rows(),
            targets: y.len(),
        });
    }
    if x.rows() < 2 {
        return Err(GbrError::TooFewRows(x.rows()));
    }
    if x.cols() == 0 {
        return Err(GbrError::NoFeatures);
    }
    for (row, r) in x.iter_rows().enumerate() {
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(GbrError::NonFiniteFeature { row, col });
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(GbrError::NonFiniteTarget(i));
    }
    Ok(())
}

fn mse(pred: &[f64], y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&i| (y[i] - pred[i]).powi(2)).sum::<f64>() / rows.len() as f64
}

pub fn fit(x: &Matrix, y: &[f64], config: &TrainConfig) -> Result<BoostedEnsemble> {
    fit_traced(x, y, config).map(|r| r.ensemble)
}

pub fn fit_traced(x: &Matrix, y: &[f64], config: &TrainConfig) -> Result<FitReport> {
    check_inputs(x, y)?;
    config.validate()?;
    let n = x.rows();

    let (train_rows, valid_rows): (Vec<usize>, Vec<usize>) = match config.early_stopping {
        None => ((0..n).collect(), Vec::new()),
        Some(es) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_for(config.seed, &[b"validation"]));
            let n_valid = ((es.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let (v, t) = order.split_at(n_valid);
            let (mut t, mut v) = (t.to_vec(), v.to_vec());
            t.sort_unstable();
            v.sort_unstable();
            (t, v)
        }
    };
    if train_rows.len() < 2 {
        return Err(GbrError::TooFewRows(train_rows.len()));
    }

    let init = train_rows.iter().map(|&i| y[i]).sum::<f64>() / train_rows.len() as f64;
    let mut pred = vec![init; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_estimators);
    let mut train_mse = vec![mse(&pred, y, &train_rows)];
    let mut valid_mse = (!valid_rows.is_empty()).then(|| vec![mse(&pred, y, &valid_rows)]);
    let (mut best_stage, mut best_valid) =
        (0usize, valid_mse.as_ref().map_or(f64::INFINITY, |v| v[0]));

    let n_sub = ((config.subsample * train_rows.len() as f64).floor() as usize).max(2);
    for stage in 0..config.n_estimators {
        for &i in &train_rows {
            residuals[i] = y[i] - pred[i];
        }
        let rows: Vec<usize> = if n_sub >= train_rows.len() {
            train_rows.clone()
        } else {
            let mut rng = rng_for(config.seed, &[b"subsample", &(stage as u64).to_le_bytes()]);
            let mut picked: Vec<usize> = index::sample(&mut rng, train_rows.len(), n_sub)
                .into_iter()
                .map(|k| train_rows[k])
                .collect();
            picked.sort_unstable();
            picked
        };
        let tree = fit_tree(
            x,
            &residuals,
            &rows,
            config.max_depth,
            config.min_samples_leaf,
        );
        for (i, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.predict(x.row(i));
        }
        trees.push(tree);
        train_mse.push(mse(&pred, y, &train_rows));

        if let (Some(es), Some(vm)) = (config.early_stopping, valid_mse.as_mut()) {
            let v = mse(&pred, y, &valid_rows);
            vm.push(v);
            if v < best_valid {
                best_valid = v;
                best_stage = stage + 1;
            } else if stage + 1 - best_stage >= es.patience {
                break;
            }
        }
    }
    if valid_mse.is_some() {
        trees.truncate(best_stage);
        train_mse.truncate(best_stage + 1);
    }

    Ok(FitReport {
        ensemble: BoostedEnsemble {
            init,
            learning_rate: config.learning_rate,
            n_features: x.cols(),
            loss: LOSS_NAME.to_string(),
            config: *config,
            trees,
        },
        train_mse,
        validation_mse: valid_mse,
    })
}

impl BoostedEnsemble {
    /// A model with no trees that predicts `value` everywhere.
    pub fn constant(value: f64, n_features: usize) -> Self {
        BoostedEnsemble {
            init: value,
            learning_rate: 1.0,
            n_features,
            loss: LOSS_NAME.to_string(),
            config: TrainConfig::default(),
            trees: Vec::new(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(GbrError::DimensionMismatch {
                expected: self.n_features,
                got: row.len(),
            });
        }
        // same accumulation order as training
        let mut f = self.init;
        for t in &self.trees {
            f += self.learning_rate * t.predict(row);
        }
        Ok(f)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(GbrError::DimensionMismatch {
                expected: self.n_features,
                got: x.cols(),
            });
        }
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    /// Versioned JSON payload; reals are written in shortest round-trip form.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(Payload {
            version: FORMAT_VERSION,
            ensemble: self.clone(),
        })
        .expect("ensemble serializes")
    }

    pub fn serialize(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_json_value()).expect("ensemble serializes")
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| GbrError::Corrupted(e.to_string()))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| GbrError::Corrupted("missing version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(GbrError::VersionMismatch { found: version });
        }
        let payload: Payload =
            serde_json::from_value(value).map_err(|e| GbrError::Corrupted(e.to_string()))?;
        payload.ensemble.check()?;
        Ok(payload.ensemble)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(GbrError::Corrupted(m));
        if !self.init.is_finite() || !self.learning_rate.is_finite() {
            return bad("non-finite ensemble parameters".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {t} has no nodes"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                let ok = match *node {
                    Node::Leaf { value } => value.is_finite(),
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        // children always follow their parent, so walks terminate
                        feature < self.n_features
                            && threshold.is_finite()
                            && left > i
                            && right > i
                            && left < tree.nodes.len()
                            && right < tree.nodes.len()
                    }
                };
                if !ok {
                    return bad(format!("tree {t}, node {i} is malformed"));
                }
            }
        }
        Ok(())
    }
}
