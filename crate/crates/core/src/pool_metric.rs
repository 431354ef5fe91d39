//! Word pool construction and pool-based precision/recall.
//!
//! The pool of an image is the set of unique tokens of all its references plus
//! the object labels reported by the detectors. A candidate is scored by how
//! many of its unique tokens fall in the pool.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexical::{tokenize, TokenSeq};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("candidate has no tokens")]
    EmptyCandidate,
    #[error("pool for image `{0}` is empty")]
    EmptyPool(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, PoolError>;

/// Object class names reported for one image by one detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionLabels {
    pub image_id: String,
    pub detector: String,
    pub labels: Vec<String>,
}

impl DetectionLabels {
    /// Label tokens; multi-word class names ("sports ball") split into words.
    pub fn tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.labels
            .iter()
            .flat_map(|l| tokenize(l).tokens().to_vec())
    }
}

/// Per-image detections, all detectors together.
pub type DetectionIndex = BTreeMap<String, Vec<DetectionLabels>>;

pub fn read_detections<R: BufRead>(reader: R) -> Result<DetectionIndex> {
    let mut index = DetectionIndex::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rec: DetectionLabels = serde_json::from_str(t).map_err(|e| PoolError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        index.entry(rec.image_id.clone()).or_default().push(rec);
    }
    Ok(index)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionIndex> {
    read_detections(BufReader::new(File::open(path)?))
}

/// Small English function-word list used only when stop-word removal is on.
pub const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "its", "of", "on", "or", "that", "the", "their", "there", "this", "to", "with",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    #[serde(default)]
    pub remove_stop_words: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPool {
    pub image_id: String,
    pub words: BTreeSet<String>,
}

impl WordPool {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

pub fn build_pool(
    image_id: &str,
    references: &[TokenSeq],
    detections: &[DetectionLabels],
    config: PoolConfig,
) -> WordPool {
    let words = references
        .iter()
        .flat_map(|r| r.tokens().iter().cloned())
        .chain(detections.iter().flat_map(DetectionLabels::tokens))
        .filter(|w| !(config.remove_stop_words && STOP_WORDS.contains(&w.as_str())))
        .collect();
    WordPool {
        image_id: image_id.to_string(),
        words,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// Unique candidate words found in the pool.
    pub overlap: usize,
    pub precision: f64,
    pub recall: f64,
}

impl PrecisionRecall {
    /// Percent form for display.
    pub fn as_percent(&self) -> (f64, f64) {
        (self.precision * 100.0, self.recall * 100.0)
    }
}

/// Unique-set precision `r / |unique(candidate)|` and recall `r / |pool|`, in [0, 1].
pub fn precision_recall(candidate: &TokenSeq, pool: &WordPool) -> Result<PrecisionRecall> {
    let unique = candidate.unique();
    if unique.is_empty() {
        return Err(PoolError::EmptyCandidate);
    }
    if pool.is_empty() {
        return Err(PoolError::EmptyPool(pool.image_id.clone()));
    }
    let overlap = unique.iter().filter(|w| pool.contains(w)).count();
    Ok(PrecisionRecall {
        overlap,
        precision: overlap as f64 / unique.len() as f64,
        recall: overlap as f64 / pool.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSeq {
        tokenize(s)
    }

    fn det(labels: &[&str]) -> DetectionLabels {
        DetectionLabels {
            image_id: "img".into(),
            detector: "yolov3".into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn pool_is_union_of_references_and_labels() {
        let p = build_pool(
            "img",
            &[seq("a dog")],
            &[det(&["dog", "frisbee"])],
            PoolConfig::default(),
        );
        assert_eq!(
            p.words,
            ["a", "dog", "frisbee"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        let p = build_pool(
            "img",
            &[seq("a dog"), seq("the dog")],
            &[],
            PoolConfig::default(),
        );
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn multi_word_labels_are_split() {
        let p = build_pool("img", &[], &[det(&["sports ball"])], PoolConfig::default());
        assert!(p.contains("sports") && p.contains("ball"));
    }

    #[test]
    fn stop_words_only_removed_when_asked() {
        let refs = [seq("a dog on the grass")];
        let on = PoolConfig {
            remove_stop_words: true,
        };
        assert_eq!(build_pool("i", &refs, &[], PoolConfig::default()).len(), 5);
        assert_eq!(build_pool("i", &refs, &[], on).len(), 2);
    }

    #[test]
    fn documented_example() {
        let pool = WordPool {
            image_id: "i".into(),
            words: ["a", "dog", "sleeps", "park", "grass"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        };
        let pr = precision_recall(&seq("a dog runs fast"), &pool).unwrap();
        assert_eq!(pr.overlap, 2);
        assert_eq!(pr.precision, 0.5);
        assert_eq!(pr.recall, 0.4);
        assert_eq!(pr.as_percent(), (50.0, 40.0));
    }

    #[test]
    fn full_and_empty_overlap() {
        let pool = build_pool("i", &[seq("a dog in a park")], &[], PoolConfig::default());
        assert_eq!(
            precision_recall(&seq("dog park"), &pool).unwrap().precision,
            1.0
        );
        let pr = precision_recall(&seq("blue whale"), &pool).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.0, 0.0));
    }

    #[test]
    fn empty_inputs_are_errors() {
        let pool = build_pool("i", &[seq("a dog")], &[], PoolConfig::default());
        assert!(matches!(
            precision_recall(&seq(""), &pool),
            Err(PoolError::EmptyCandidate)
        ));
        let empty = build_pool("e", &[], &[], PoolConfig::default());
        assert!(matches!(
            precision_recall(&seq("dog"), &empty),
            Err(PoolError::EmptyPool(_))
        ));
    }

    #[test]
    fn detections_file_groups_by_image() {
        let text = "{\"image_id\":\"i1\",\"detector\":\"yolov3\",\"labels\":[\"dog\"]}\n{\"image_id\":\"i1\",\"detector\":\"detr\",\"labels\":[\"frisbee\",\"person\"]}\n";
        let idx = read_detections(text.as_bytes()).unwrap();
        assert_eq!(idx["i1"].len(), 2);
    }
}
