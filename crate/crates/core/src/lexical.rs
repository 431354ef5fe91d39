//! Tokenization and the n-gram/LCS caption metrics: BLEU-4, ROUGE-L, a
//! reduced METEOR (exact and stem stages, no synonym tables) and base CIDEr.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Deref;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexicalError {
    #[error("at least one reference is required")]
    NoReferences,
}

pub type Result<T> = std::result::Result<T, LexicalError>;

/// Lowercased, punctuation-free tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn unique(&self) -> BTreeSet<&str> {
        self.0.iter().map(String::as_str).collect()
    }

    pub fn stemmed(&self) -> TokenSeq {
        TokenSeq(self.0.iter().map(|t| stem(t)).collect())
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// Lowercases, turns every non-alphanumeric character into a space and splits
/// on whitespace.
pub fn tokenize(text: &str) -> TokenSeq {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    TokenSeq(cleaned.split_whitespace().map(str::to_string).collect())
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Porter-family English stem.
pub fn stem(token: &str) -> String {
    stemmer().stem(token).into_owned()
}

/// Multiset of the n-grams of one token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile {
    pub n: usize,
    pub counts: HashMap<Vec<String>, usize>,
}

impl NGramProfile {
    pub fn new(tokens: &[String], n: usize) -> Self {
        assert!(n >= 1, "n-gram order starts at 1");
        let mut counts = HashMap::new();
        if tokens.len() >= n {
            for w in tokens.windows(n) {
                *counts.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        NGramProfile { n, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }
}

pub const BLEU_MAX_N: usize = 4;
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sufficient statistics for BLEU; sums across sentences give corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_MAX_N],
    pub totals: [usize; BLEU_MAX_N],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn collect(candidate: &TokenSeq, references: &[TokenSeq]) -> Result<Self> {
        if references.is_empty() {
            return Err(LexicalError::NoReferences);
        }
        let mut stats = BleuStats {
            candidate_len: candidate.len(),
            reference_len: closest_ref_len(candidate.len(), references),
            ..Default::default()
        };
        for n in 1..=BLEU_MAX_N {
            let cand = NGramProfile::new(candidate, n);
            let refs: Vec<NGramProfile> =
                references.iter().map(|r| NGramProfile::new(r, n)).collect();
            let mut matched = 0;
            for (gram, &count) in &cand.counts {
                let max_ref = refs.iter().map(|r| r.get(gram)).max().unwrap_or(0);
                matched += count.min(max_ref);
            }
            stats.matches[n - 1] = matched;
            stats.totals[n - 1] = cand.total();
        }
        Ok(stats)
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..BLEU_MAX_N {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let log_precision: f64 = (0..BLEU_MAX_N)
            .map(|n| {
                let matched = if self.matches[n] == 0 {
                    BLEU_EPSILON
                } else {
                    self.matches[n] as f64
                };
                (matched / self.totals[n].max(1) as f64).ln()
            })
            .sum::<f64>()
            / BLEU_MAX_N as f64;
        let c = self.candidate_len as f64;
        let r = self.reference_len as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        (bp * log_precision.exp()).min(1.0)
    }
}

/// Reference length closest to the candidate length, shorter one on ties.
fn closest_ref_len(cand_len: usize, references: &[TokenSeq]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(cand_len), len))
        .unwrap_or(0)
}

/// Sentence-level BLEU-4 with add-epsilon smoothing of zero match counts.
pub fn bleu4(candidate: &TokenSeq, references: &[TokenSeq]) -> Result<f64> {
    Ok(BleuStats::collect(candidate, references)?.score())
}

/// Corpus-level BLEU-4: statistics are pooled before the geometric mean.
pub fn bleu4_corpus<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a TokenSeq, &'a [TokenSeq])>,
{
    let mut total = BleuStats::default();
    for (cand, refs) in pairs {
        total.add(&BleuStats::collect(cand, refs)?);
    }
    Ok(total.score())
}

pub const DEFAULT_ROUGE_BETA: f64 = 1.2;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    lcs_len_by(a, b, T::eq)
}

pub fn lcs_len_by<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if a.len() <= 64 && b.len() <= 64 {
        return lcs_bits(a, b, eq);
    }
    lcs_rows(
        a,
        b,
        eq,
        &mut vec![0usize; b.len() + 1],
        &mut vec![0usize; b.len() + 1],
    )
}

fn same_token(x: &String, y: &String) -> bool {
    let (x, y) = (x.as_bytes(), y.as_bytes());
    x.len() == y.len() && x.iter().zip(y).all(|(a, b)| a == b)
}

/// Bit-parallel LCS (Hyyrö) for inputs of at most 64 items.
fn lcs_bits<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> usize {
    let mut ids = [0u8; 64];
    let mut reps = [0u8; 64];
    let mut distinct = 0;
    for (i, x) in a.iter().enumerate() {
        ids[i] = match reps[..distinct].iter().position(|&r| eq(&a[r as usize], x)) {
            Some(k) => k as u8,
            None => {
                reps[distinct] = i as u8;
                distinct += 1;
                distinct as u8 - 1
            }
        };
    }
    let mut masks = [0u64; 64];
    for (j, y) in b.iter().enumerate() {
        if let Some(k) = reps[..distinct].iter().position(|&r| eq(&a[r as usize], y)) {
            masks[k] |= 1 << j;
        }
    }
    let mut v = !0u64;
    for &k in &ids[..a.len()] {
        let u = v & masks[k as usize];
        v = v.wrapping_add(u) | (v - u);
    }
    let low = if b.len() == 64 {
        !0
    } else {
        (1u64 << b.len()) - 1
    };
    (!v & low).count_ones() as usize
}

fn lcs_rows<'r, T>(
    a: &[T],
    b: &[T],
    eq: impl Fn(&T, &T) -> bool,
    mut prev: &'r mut [usize],
    mut cur: &'r mut [usize],
) -> usize {
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if eq(x, y) {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure, maximised over the references.
pub fn rouge_l(candidate: &TokenSeq, references: &[TokenSeq], beta: f64) -> Result<f64> {
    if references.is_empty() {
        return Err(LexicalError::NoReferences);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok(references
        .iter()
        .map(|r| {
            let lcs = lcs_len_by(candidate, r, same_token);
            if lcs == 0 {
                return 0.0;
            }
            let p = lcs as f64 / candidate.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max))
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Unigram alignment between a candidate and one reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// `(candidate index, reference index)`, sorted by candidate index.
    pub pairs: Vec<(usize, usize)>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }

    /// Number of maximal runs contiguous and in order on both sides.
    pub fn chunks(&self) -> usize {
        if self.pairs.is_empty() {
            return 0;
        }
        1 + self
            .pairs
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count()
    }
}

/// Staged alignment: exact surface matches first, then Porter-stem matches on
/// what is left. Within a stage each candidate token, in order, takes the
/// reference position that continues the previous chunk when possible, else
/// the first free match.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let cand_stems: Vec<String> = candidate.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    let mut cand_to_ref: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];

    let stages: [&dyn Fn(usize, usize) -> bool; 2] =
        [&|i, j| candidate[i] == reference[j], &|i, j| {
            cand_stems[i] == ref_stems[j]
        }];
    for matches in stages {
        for i in 0..candidate.len() {
            if cand_to_ref[i].is_some() {
                continue;
            }
            let continuation = i
                .checked_sub(1)
                .and_then(|p| cand_to_ref[p])
                .map(|j| j + 1)
                .filter(|&j| j < reference.len() && !ref_used[j] && matches(i, j));
            let pick = continuation
                .or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && matches(i, j)));
            if let Some(j) = pick {
                cand_to_ref[i] = Some(j);
                ref_used[j] = true;
            }
        }
    }
    Alignment {
        pairs: cand_to_ref
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect(),
    }
}

/// METEOR score of one alignment.
pub fn meteor_from_alignment(alignment: &Alignment, cand_len: usize, ref_len: usize) -> f64 {
    let m = alignment.matches();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand_len as f64;
    let r = m as f64 / ref_len as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let frag = alignment.chunks() as f64 / m as f64;
    let penalty = METEOR_GAMMA * frag.powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

pub fn meteor(candidate: &TokenSeq, references: &[TokenSeq]) -> Result<f64> {
    if references.is_empty() {
        return Err(LexicalError::NoReferences);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    Ok(references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| meteor_from_alignment(&align(candidate, r), candidate.len(), r.len()))
        .fold(0.0, f64::max))
}

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

/// One corpus entry for CIDEr; references are grouped per image for the
/// document frequencies.
#[derive(Debug, Clone)]
pub struct CiderInput {
    pub image_id: String,
    pub candidate: TokenSeq,
    pub references: Vec<TokenSeq>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderOutput {
    pub scores: Vec<f64>,
    /// Fewer than two reference sets: every idf is zero and scores are reported as 0.
    pub degenerate: bool,
}

/// Document frequencies of stemmed n-grams over the distinct images'
/// reference sets. Built once, read-only while scoring.
#[derive(Debug, Clone)]
pub struct CiderIdf {
    n_docs: usize,
    df: [HashMap<Vec<String>, usize>; CIDER_MAX_N],
}

impl CiderIdf {
    pub fn build(inputs: &[CiderInput]) -> Self {
        let mut seen_images = HashSet::new();
        let mut df: [HashMap<Vec<String>, usize>; CIDER_MAX_N] = Default::default();
        for input in inputs {
            if !seen_images.insert(input.image_id.as_str()) {
                continue;
            }
            let stemmed: Vec<TokenSeq> = input.references.iter().map(TokenSeq::stemmed).collect();
            for (n, table) in df.iter_mut().enumerate() {
                let mut present: HashSet<&[String]> = HashSet::new();
                for r in &stemmed {
                    if r.len() > n {
                        present.extend(r.windows(n + 1));
                    }
                }
                for gram in present {
                    *table.entry(gram.to_vec()).or_insert(0) += 1;
                }
            }
        }
        CiderIdf {
            n_docs: seen_images.len(),
            df,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn is_degenerate(&self) -> bool {
        self.n_docs < 2
    }

    /// `ln(N) - ln(max(1, df))`
    pub fn idf(&self, n: usize, gram: &[String]) -> f64 {
        let df = self.df[n - 1].get(gram).copied().unwrap_or(0).max(1);
        (self.n_docs as f64).ln() - (df as f64).ln()
    }

    fn vector(&self, tokens: &TokenSeq, n: usize) -> HashMap<Vec<String>, f64> {
        NGramProfile::new(tokens, n)
            .counts
            .into_iter()
            .map(|(gram, count)| {
                let w = count as f64 * self.idf(n, &gram);
                (gram, w)
            })
            .collect()
    }

    /// CIDEr of one candidate against its references (raw tokens; stemming is
    /// applied here).
    pub fn score(&self, candidate: &TokenSeq, references: &[TokenSeq]) -> f64 {
        if self.is_degenerate() || references.is_empty() {
            return 0.0;
        }
        let cand = candidate.stemmed();
        let refs: Vec<TokenSeq> = references.iter().map(TokenSeq::stemmed).collect();
        let mut total = 0.0;
        for n in 1..=CIDER_MAX_N {
            let cv = self.vector(&cand, n);
            let per_ref: f64 = refs
                .iter()
                .map(|r| sparse_cosine(&cv, &self.vector(r, n)))
                .sum();
            total += per_ref / refs.len() as f64;
        }
        CIDER_SCALE * total / CIDER_MAX_N as f64
    }
}

fn sparse_cosine(a: &HashMap<Vec<String>, f64>, b: &HashMap<Vec<String>, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| va * vb))
        .sum();
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Base CIDEr (no length penalty, uniform n weights, x10 scale) for every input.
pub fn cider(inputs: &[CiderInput]) -> CiderOutput {
    let idf = CiderIdf::build(inputs);
    CiderOutput {
        scores: inputs
            .iter()
            .map(|i| idf.score(&i.candidate, &i.references))
            .collect(),
        degenerate: idf.is_degenerate(),
    }
}
