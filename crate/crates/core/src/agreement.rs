//! Inter-rater and rank-correlation statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("series need at least 2 paired values, got {0}")]
    TooShort(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("rating matrix row {row} has {got} raters, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("no unit has two or more ratings")]
    NoPairableValues,
    #[error("expected disagreement is zero (all ratings identical); alpha is undefined")]
    NoExpectedDisagreement,
    #[error("a series has zero rank variance")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, AgreementError>;

/// Level of measurement, selecting the difference function of alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Nominal,
    Ordinal,
    #[default]
    Interval,
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nominal" => Ok(Level::Nominal),
            "ordinal" => Ok(Level::Ordinal),
            "interval" => Ok(Level::Interval),
            other => Err(format!("unknown measurement level `{other}`")),
        }
    }
}

/// Units (rows) by raters (columns); `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    units: Vec<Vec<Option<f64>>>,
    level: Level,
}

impl RatingMatrix {
    pub fn new(mut units: Vec<Vec<Option<f64>>>, level: Level) -> Result<Self> {
        // fold -0.0 into 0.0 so value lookup by total order stays consistent
        for v in units.iter_mut().flatten().flatten() {
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        let width = units.first().map_or(0, Vec::len);
        for (row, u) in units.iter().enumerate() {
            if u.len() != width {
                return Err(AgreementError::Ragged {
                    row,
                    expected: width,
                    got: u.len(),
                });
            }
            if let Some(pos) = u.iter().position(|v| v.is_some_and(|v| !v.is_finite())) {
                return Err(AgreementError::NonFinite(row * width.max(1) + pos));
            }
        }
        Ok(RatingMatrix { units, level })
    }

    /// Builds from rater-major data: `raters[r][u]` is rater `r`'s rating of unit `u`.
    pub fn from_raters(raters: &[Vec<Option<f64>>], level: Level) -> Result<Self> {
        let n_units = raters.first().map_or(0, Vec::len);
        for (r, col) in raters.iter().enumerate() {
            if col.len() != n_units {
                return Err(AgreementError::Ragged {
                    row: r,
                    expected: n_units,
                    got: col.len(),
                });
            }
        }
        let units = (0..n_units)
            .map(|u| raters.iter().map(|col| col[u]).collect())
            .collect();
        Self::new(units, level)
    }

    pub fn units(&self) -> &[Vec<Option<f64>>] {
        &self.units
    }

    pub fn level(&self) -> Level {
        self.level
    }
}

/// Coincidence matrix over the distinct observed values.
#[derive(Debug, Clone, PartialEq)]
pub struct Coincidences {
    pub values: Vec<f64>,
    /// `o[c][k]`
    pub counts: Vec<Vec<f64>>,
}

impl Coincidences {
    pub fn build(matrix: &RatingMatrix) -> Self {
        let mut values: Vec<f64> = matrix
            .units
            .iter()
            .filter(|u| u.iter().flatten().count() >= 2)
            .flat_map(|u| u.iter().flatten().copied())
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let k = values.len();
        let mut counts = vec![vec![0.0; k]; k];
        for unit in &matrix.units {
            if unit.iter().flatten().count() < 2 {
                continue;
            }
            let present: Vec<usize> = unit
                .iter()
                .flatten()
                .map(|v| {
                    values
                        .binary_search_by(|p| p.total_cmp(v))
                        .expect("value indexed")
                })
                .collect();
            let m = present.len();
            let mut per_value = vec![0usize; k];
            for &i in &present {
                per_value[i] += 1;
            }
            let w = 1.0 / (m - 1) as f64;
            for c in 0..k {
                if per_value[c] == 0 {
                    continue;
                }
                for d in 0..k {
                    let pairs = if c == d {
                        per_value[c] * (per_value[c] - 1)
                    } else {
                        per_value[c] * per_value[d]
                    };
                    counts[c][d] += pairs as f64 * w;
                }
            }
        }
        Coincidences { values, counts }
    }

    pub fn marginals(&self) -> Vec<f64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Squared difference `delta^2(c, k)` for value indices `c`, `k`.
fn squared_difference(level: Level, values: &[f64], marginals: &[f64], c: usize, k: usize) -> f64 {
    if c == k {
        return 0.0;
    }
    match level {
        Level::Nominal => 1.0,
        Level::Interval => (values[c] - values[k]).powi(2),
        Level::Ordinal => {
            let (lo, hi) = (c.min(k), c.max(k));
            let between: f64 = marginals[lo..=hi].iter().sum();
            (between - (marginals[lo] + marginals[hi]) / 2.0).powi(2)
        }
    }
}

/// Observed and expected disagreement with the resulting alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub observed: f64,
    pub expected: f64,
    pub alpha: f64,
    pub pairable: f64,
}

pub fn krippendorff_alpha_report(matrix: &RatingMatrix) -> Result<AlphaReport> {
    let co = Coincidences::build(matrix);
    let marg = co.marginals();
    let n: f64 = marg.iter().sum();
    if n < 2.0 {
        return Err(AgreementError::NoPairableValues);
    }
    let k = co.values.len();
    let (mut observed, mut expected) = (0.0, 0.0);
    for c in 0..k {
        for d in 0..k {
            let delta = squared_difference(matrix.level, &co.values, &marg, c, d);
            observed += co.counts[c][d] * delta;
            expected += marg[c] * marg[d] * delta;
        }
    }
    observed /= n;
    expected /= n * (n - 1.0);
    if expected == 0.0 {
        return Err(AgreementError::NoExpectedDisagreement);
    }
    let alpha = if observed == 0.0 {
        1.0
    } else {
        1.0 - observed / expected
    };
    Ok(AlphaReport {
        observed,
        expected,
        alpha,
        pairable: n,
    })
}

/// `1 - D_o / D_e` from the coincidence matrix.
pub fn krippendorff_alpha(matrix: &RatingMatrix) -> Result<f64> {
    krippendorff_alpha_report(matrix).map(|r| r.alpha)
}

/// Two equal-length finite series with at least two pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(AgreementError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(AgreementError::TooShort(x.len()));
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(AgreementError::NonFinite(i % x.len()));
        }
        Ok(PairedSeries { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauVariant {
    /// `(C - D) / (n (n - 1) / 2)`
    #[default]
    A,
    /// Tie-corrected denominator `sqrt((m - T_x)(m - T_y))`.
    B,
}

impl FromStr for TauVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "a" | "tau-a" => Ok(TauVariant::A),
            "b" | "tau-b" => Ok(TauVariant::B),
            other => Err(format!("unknown tau variant `{other}`")),
        }
    }
}

/// Pair counts behind Kendall's tau.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_x: u64,
    pub tied_y: u64,
    pub tied_xy: u64,
    pub total: u64,
}

fn tied_pairs<T>(sorted: &[T], same: impl Fn(&T, &T) -> bool) -> u64 {
    let mut pairs = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if same(&w[0], &w[1]) {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    pairs + run * (run - 1) / 2
}

/// Counts inversions while merge-sorting `v` ascending.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Concordant/discordant/tie counts in `O(n log n)` (Knight's method).
pub fn pair_counts(series: &PairedSeries) -> PairCounts {
    let n = series.len();
    let mut pairs: Vec<(f64, f64)> = series
        .x
        .iter()
        .copied()
        .zip(series.y.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let tied_x = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let tied_xy = tied_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let tied_y = tied_pairs(&ys, |a, b| a == b);
    let total = (n as u64) * (n as u64 - 1) / 2;
    let concordant = total - tied_x - tied_y + tied_xy - discordant;
    PairCounts {
        concordant,
        discordant,
        tied_x,
        tied_y,
        tied_xy,
        total,
    }
}

pub fn kendall_tau(series: &PairedSeries, variant: TauVariant) -> Result<f64> {
    let c = pair_counts(series);
    let diff = c.concordant as f64 - c.discordant as f64;
    match variant {
        TauVariant::A => Ok(diff / c.total as f64),
        TauVariant::B => {
            let denom = ((c.total - c.tied_x) as f64 * (c.total - c.tied_y) as f64).sqrt();
            if denom == 0.0 {
                Err(AgreementError::ZeroVariance)
            } else {
                Ok(diff / denom)
            }
        }
    }
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AgreementError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AgreementError::TooShort(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AgreementError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn has_ties(values: &[f64]) -> bool {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).any(|w| w[0] == w[1])
}

/// Spearman's rho. Without ties `1 - 6 sum(d^2) / (n (n^2 - 1))`; with ties,
/// Pearson correlation of mid-ranks.
pub fn spearman_rho(series: &PairedSeries) -> Result<f64> {
    let rx = mid_ranks(&series.x);
    let ry = mid_ranks(&series.y);
    if has_ties(&series.x) || has_ties(&series.y) {
        return pearson(&rx, &ry);
    }
    Ok(rho_from_rank_differences(&rx, &ry))
}

/// `1 - 6 sum(d^2) / (n (n^2 - 1))` for tie-free rank vectors.
pub fn rho_from_rank_differences(rx: &[f64], ry: &[f64]) -> f64 {
    let n = rx.len() as f64;
    let d2: f64 = rx.iter().zip(ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Cell of an agreement table: a value or the reason it is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Value(f64),
    Insufficient(String),
}

impl Cell {
    fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) => Cell::Value(v),
            Err(e) => Cell::Insufficient(e.to_string()),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            Cell::Insufficient(_) => None,
        }
    }
}

/// Phase 1 vs phase 2 agreement of one tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerAgreement {
    pub tagger: String,
    /// Samples scored in both phases.
    pub paired: usize,
    pub alpha: Cell,
    pub tau: Cell,
}

/// Alpha over a set of (tagger, phase) columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAgreement {
    pub label: String,
    pub columns: Vec<(String, u32)>,
    pub alpha: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTables {
    pub level: Level,
    pub tau: TauVariant,
    pub taggers: Vec<TaggerAgreement>,
    pub groups: Vec<GroupAgreement>,
}

impl AgreementTables {
    pub fn tagger(&self, tagger: &str) -> Option<&TaggerAgreement> {
        self.taggers.iter().find(|t| t.tagger == tagger)
    }

    pub fn group(&self, label: &str) -> Option<&GroupAgreement> {
        self.groups.iter().find(|g| g.label == label)
    }
}

/// First score per (sample, tagger, phase), keyed by column.
fn score_columns(corpus: &Corpus) -> BTreeMap<(String, u32), Vec<Option<f64>>> {
    let mut cols: BTreeMap<(String, u32), Vec<Option<f64>>> = BTreeMap::new();
    for s in corpus {
        for r in &s.raw_scores {
            cols.entry((r.tagger.clone(), r.phase))
                .or_insert_with(|| vec![None; corpus.len()]);
        }
    }
    for (u, s) in corpus.iter().enumerate() {
        for r in &s.raw_scores {
            let cell = &mut cols.get_mut(&(r.tagger.clone(), r.phase)).expect("column")[u];
            if cell.is_none() {
                *cell = Some(r.score);
            }
        }
    }
    cols
}

fn group_alpha(
    cols: &BTreeMap<(String, u32), Vec<Option<f64>>>,
    keys: &[(String, u32)],
    level: Level,
) -> Cell {
    let raters: Vec<Vec<Option<f64>>> = keys.iter().map(|k| cols[k].clone()).collect();
    Cell::from_result(
        RatingMatrix::from_raters(&raters, level).and_then(|m| krippendorff_alpha(&m)),
    )
}

/// Tagger consistency across phases 1 and 2, plus alpha for every phase
/// combination and for all taggers but one, over the raw scores of `corpus`.
pub fn tagging_agreement(corpus: &Corpus, level: Level, tau: TauVariant) -> AgreementTables {
    let cols = score_columns(corpus);
    let taggers: Vec<String> = cols
        .keys()
        .map(|k| k.0.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let phase_cols = |phases: &[u32], skip: Option<&str>| -> Vec<(String, u32)> {
        cols.keys()
            .filter(|k| phases.contains(&k.1) && Some(k.0.as_str()) != skip)
            .cloned()
            .collect()
    };
    let per_tagger = taggers
        .iter()
        .map(|t| {
            let empty = vec![None; corpus.len()];
            let p1 = cols.get(&(t.clone(), 1)).unwrap_or(&empty);
            let p2 = cols.get(&(t.clone(), 2)).unwrap_or(&empty);
            let (x, y): (Vec<f64>, Vec<f64>) = p1
                .iter()
                .zip(p2)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            let paired = x.len();
            let tau_cell =
                Cell::from_result(PairedSeries::new(x, y).and_then(|s| kendall_tau(&s, tau)));
            let alpha = Cell::from_result(
                RatingMatrix::from_raters(&[p1.clone(), p2.clone()], level)
                    .and_then(|m| krippendorff_alpha(&m)),
            );
            TaggerAgreement {
                tagger: t.clone(),
                paired,
                alpha,
                tau: tau_cell,
            }
        })
        .collect();
    let mut groups = Vec::new();
    let mut push = |label: String, keys: Vec<(String, u32)>| {
        let alpha = group_alpha(&cols, &keys, level);
        groups.push(GroupAgreement {
            label,
            columns: keys,
            alpha,
        });
    };
    push("all taggers phase 1".into(), phase_cols(&[1], None));
    push("all taggers phase 2".into(), phase_cols(&[2], None));
    push("all taggers both phases".into(), phase_cols(&[1, 2], None));
    for t in &taggers {
        push(
            format!("all except {t}, both phases"),
            phase_cols(&[1, 2], Some(t)),
        );
    }
    AgreementTables {
        level,
        tau,
        taggers: per_tagger,
        groups,
    }
}
