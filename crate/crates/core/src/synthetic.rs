//! Seeded synthetic data: a small captioning world with every input the
//! metrics need, a plain feature/target fixture and a large external-style
//! corpus with zero-scored rows.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{
    CaptionSample, Corpus, RawScore, SplitSpec, COMPOSITE_RELEVANCE, COMPOSITE_SOURCE,
    COMPOSITE_THOROUGHNESS, FLICKR8K_CF_SOURCE, FLICKR8K_EXPERT_SOURCE, OWN_SOURCE, SCALE,
    VICR_SOURCE,
};
use crate::embed_metrics::{
    reference_key, EmbeddingKind, EmbeddingStore, EmbeddingTable, ScoreChannel,
};
use crate::gbr::Matrix;
use crate::lexical::tokenize;
use crate::pool_metric::{DetectionIndex, DetectionLabels};
use crate::seed::rng_for;

const NOUNS: &[&str] = &[
    "dog",
    "cat",
    "man",
    "woman",
    "child",
    "horse",
    "bicycle",
    "car",
    "bus",
    "boat",
    "bird",
    "kite",
    "ball",
    "frisbee",
    "bench",
    "tree",
    "umbrella",
    "surfboard",
    "skateboard",
    "train",
    "cow",
    "sheep",
    "girl",
    "boy",
    "table",
    "pizza",
    "plate",
    "truck",
    "motorcycle",
    "elephant",
    "giraffe",
    "zebra",
    "bear",
    "laptop",
    "phone",
    "book",
    "chair",
    "clock",
    "vase",
    "bottle",
];
const COLORS: &[&str] = &[
    "black", "white", "brown", "red", "blue", "green", "yellow", "gray",
];
const VERBS: &[&str] = &[
    "running", "sitting", "standing", "jumping", "playing", "walking", "lying", "eating", "riding",
    "looking", "waiting", "resting",
];
const SCENES: &[&str] = &[
    "park", "street", "beach", "field", "kitchen", "room", "river", "snow", "garden", "road",
];
const FILLERS: &[&str] = &[
    "a", "the", "is", "in", "on", "near", "with", "and", "of", "there", "next", "to", "picture",
];

pub const DEFAULT_MODELS: [(&str, f64); 6] = [
    ("humans", 0.92),
    ("ofa", 0.86),
    ("blip2", 0.8),
    ("m2", 0.62),
    ("convcap", 0.45),
    ("saat", 0.28),
];

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub n_images: usize,
    /// Model id and mean caption quality in [0, 1].
    pub models: Vec<(String, f64)>,
    pub n_taggers: usize,
    pub n_phases: u32,
    pub n_references: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_images: 100,
            models: DEFAULT_MODELS
                .iter()
                .map(|(m, q)| (m.to_string(), *q))
                .collect(),
            n_taggers: 4,
            n_phases: 2,
            n_references: 5,
            dim: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
struct Scene {
    color: usize,
    noun: usize,
    other: usize,
    verb: usize,
    place: usize,
}

impl Scene {
    fn words(&self) -> [&'static str; 5] {
        [
            COLORS[self.color],
            NOUNS[self.noun],
            NOUNS[self.other],
            VERBS[self.verb],
            SCENES[self.place],
        ]
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        let noun = rng.random_range(0..NOUNS.len());
        let mut other = rng.random_range(0..NOUNS.len() - 1);
        if other >= noun {
            other += 1;
        }
        Scene {
            color: rng.random_range(0..COLORS.len()),
            noun,
            other,
            verb: rng.random_range(0..VERBS.len()),
            place: rng.random_range(0..SCENES.len()),
        }
    }

    /// A copy where each slot stays correct with probability `q`.
    fn perturbed(&self, q: f64, rng: &mut ChaCha8Rng) -> (Scene, f64) {
        let mut s = self.clone();
        let mut correct = 0;
        let mut pick = |cur: &mut usize, n: usize, rng: &mut ChaCha8Rng| {
            if rng.random_bool(q.clamp(0.0, 1.0)) {
                correct += 1;
            } else {
                let mut v = rng.random_range(0..n - 1);
                if v >= *cur {
                    v += 1;
                }
                *cur = v;
            }
        };
        pick(&mut s.color, COLORS.len(), rng);
        pick(&mut s.noun, NOUNS.len(), rng);
        pick(&mut s.other, NOUNS.len(), rng);
        pick(&mut s.verb, VERBS.len(), rng);
        pick(&mut s.place, SCENES.len(), rng);
        (s, correct as f64 / 5.0)
    }
}

fn render(s: &Scene, template: usize) -> String {
    let [c, n, o, v, p] = s.words();
    match template % 6 {
        0 => format!("a {c} {n} is {v} in the {p}"),
        1 => format!("the {n} {v} near a {o}"),
        2 => format!("a {c} {n} and a {o} in the {p}"),
        3 => format!("{c} {n} {v} on the {p}"),
        4 => format!("there is a {n} {v} next to the {o}"),
        _ => format!("a picture of a {c} {n} {v} with a {o} in the {p}"),
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn noisy_sum(parts: &[&[f64]], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = Normal::new(0.0, sigma).expect("valid normal");
    let dim = parts[0].len();
    (0..dim)
        .map(|i| parts.iter().map(|p| p[i]).sum::<f64>() + n.sample(rng))
        .collect()
}

fn snap(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    SCALE
        .iter()
        .copied()
        .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
        .expect("non-empty scale")
}

/// A captioning world: corpus with tagger scores, CLIP and MCIP stores, token
/// embeddings, ViLT and grammar channels and detector labels. Caption
/// quality drives every signal with different amounts of noise.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub corpus: Corpus,
    pub clip: EmbeddingStore,
    pub mcip: EmbeddingStore,
    pub bert: EmbeddingStore,
    pub channels: BTreeMap<String, ScoreChannel>,
    pub detections: DetectionIndex,
    /// Fraction of correct content slots per sample.
    pub quality: BTreeMap<String, f64>,
}

impl SyntheticWorld {
    pub fn generate(config: &WorldConfig) -> Self {
        let seed = config.seed;
        let mut rng = rng_for(seed, &[b"world"]);
        let dim = config.dim;
        let mut concept: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut token_vec: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for w in NOUNS
            .iter()
            .chain(COLORS)
            .chain(VERBS)
            .chain(SCENES)
            .chain(FILLERS)
        {
            concept.insert(w, unit_vector(&mut rng, dim));
            token_vec.insert(w, unit_vector(&mut rng, dim));
        }
        let embed = |scene: &Scene, sigma: f64, rng: &mut ChaCha8Rng| {
            let words = scene.words();
            let parts: Vec<&[f64]> = words.iter().map(|w| concept[w].as_slice()).collect();
            noisy_sum(&parts, sigma, rng)
        };
        let tokens_of = |text: &str, rng: &mut ChaCha8Rng| -> Vec<f64> {
            tokenize(text)
                .iter()
                .flat_map(|t| noisy_sum(&[&token_vec[t.as_str()]], 0.15, rng))
                .collect()
        };

        let mut samples = Vec::new();
        let mut clip = EmbeddingStore::default();
        let mut mcip = EmbeddingStore::default();
        let mut bert = EmbeddingStore {
            tokens: Some(EmbeddingTable::new(EmbeddingKind::Tokens, dim)),
            ..Default::default()
        };
        let mut vilt = ScoreChannel::new("vilt");
        let mut grammar = ScoreChannel::new("bertgrammar");
        let mut detections = DetectionIndex::new();
        let mut quality = BTreeMap::new();
        let biases: Vec<f64> = (0..config.n_taggers)
            .map(|_| rng.random_range(-0.08..0.08))
            .collect();
        let noise = Normal::new(0.0, 1.0).expect("valid normal");

        for img in 0..config.n_images {
            let image_id = format!("img{img:04}");
            let scene = Scene::random(&mut rng);
            let references: Vec<String> = (0..config.n_references)
                .map(|k| render(&scene, k))
                .collect();
            clip.insert(
                EmbeddingKind::Image,
                image_id.clone(),
                embed(&scene, 1.0, &mut rng),
            )
            .expect("image");
            mcip.insert(
                EmbeddingKind::Image,
                image_id.clone(),
                embed(&scene, 0.6, &mut rng),
            )
            .expect("image");
            for (k, r) in references.iter().enumerate() {
                let key = reference_key(&image_id, k);
                clip.insert(
                    EmbeddingKind::Caption,
                    key.clone(),
                    embed(&scene, 1.0, &mut rng),
                )
                .expect("ref");
                mcip.insert(
                    EmbeddingKind::Caption,
                    key.clone(),
                    embed(&scene, 0.6, &mut rng),
                )
                .expect("ref");
                bert.insert(EmbeddingKind::Tokens, key, tokens_of(r, &mut rng))
                    .expect("tokens");
            }
            let mut dets = Vec::new();
            for detector in ["yolov3", "detr", "ssd"] {
                let mut labels = Vec::new();
                for n in [scene.noun, scene.other] {
                    if rng.random_bool(0.8) {
                        labels.push(NOUNS[n].to_string());
                    }
                }
                if rng.random_bool(0.2) {
                    labels.push(NOUNS[rng.random_range(0..NOUNS.len())].to_string());
                }
                dets.push(DetectionLabels {
                    image_id: image_id.clone(),
                    detector: detector.to_string(),
                    labels,
                });
            }
            detections.insert(image_id.clone(), dets);

            for (model_id, q) in &config.models {
                let sample_id = format!("{image_id}-{model_id}");
                let latent = (q + 0.12 * noise.sample(&mut rng)).clamp(0.0, 1.0);
                let (said, correct) = scene.perturbed(latent, &mut rng);
                let candidate = render(&said, rng.random_range(0..6));
                quality.insert(sample_id.clone(), correct);
                let mut raw_scores = Vec::new();
                for (t, bias) in biases.iter().enumerate() {
                    for phase in 1..=config.n_phases {
                        let v = 0.9 * correct + 0.05 + bias + 0.12 * noise.sample(&mut rng);
                        raw_scores.push(RawScore {
                            tagger: format!("tagger{}", t + 1),
                            phase,
                            score: snap(v),
                        });
                    }
                }
                clip.insert(
                    EmbeddingKind::Caption,
                    sample_id.clone(),
                    embed(&said, 1.0, &mut rng),
                )
                .expect("cap");
                mcip.insert(
                    EmbeddingKind::Caption,
                    sample_id.clone(),
                    embed(&said, 0.6, &mut rng),
                )
                .expect("cap");
                bert.insert(
                    EmbeddingKind::Tokens,
                    sample_id.clone(),
                    tokens_of(&candidate, &mut rng),
                )
                .expect("tokens");
                vilt.insert(
                    sample_id.clone(),
                    (correct + 0.2 * noise.sample(&mut rng)).clamp(0.0, 1.0),
                )
                .expect("finite");
                grammar
                    .insert(
                        sample_id.clone(),
                        (0.9 + 0.05 * noise.sample(&mut rng)).clamp(0.0, 1.0),
                    )
                    .expect("finite");
                samples.push(CaptionSample {
                    sample_id,
                    image_id: image_id.clone(),
                    model_id: model_id.clone(),
                    candidate,
                    references: references.clone(),
                    source: OWN_SOURCE.to_string(),
                    raw_scores,
                });
            }
        }
        SyntheticWorld {
            corpus: Corpus::new(samples).expect("unique ids"),
            clip,
            mcip,
            bert,
            channels: BTreeMap::from([
                ("vilt".to_string(), vilt),
                ("bertgrammar".to_string(), grammar),
            ]),
            detections,
            quality,
        }
    }
}

/// Rows of four features in [0, 1] with a clamped, noisy, monotone target.
#[derive(Debug, Clone)]
pub struct FeatureFixture {
    pub ids: Vec<String>,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl FeatureFixture {
    pub fn generate(n: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[b"features"]);
        let noise = Normal::new(0.0, 0.06).expect("valid normal");
        let mut data = Vec::with_capacity(n * 4);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let f: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
            let t = 0.35 * f[0]
                + 0.3 * f[1] * f[1]
                + 0.2 * f[2].sqrt()
                + 0.15 * f[3]
                + noise.sample(&mut rng);
            data.extend(f);
            y.push(t.clamp(0.0, 1.0));
        }
        FeatureFixture {
            ids: (0..n).map(|i| format!("f{i:04}")).collect(),
            x: Matrix::new(n, 4, data).expect("shape"),
            y,
        }
    }

    /// Row indices of the train and test parts under a corpus split spec.
    pub fn split(&self, spec: &SplitSpec) -> (Vec<usize>, Vec<usize>) {
        let corpus = Corpus::new(
            self.ids
                .iter()
                .map(|id| CaptionSample {
                    sample_id: id.clone(),
                    image_id: id.clone(),
                    model_id: "fixture".into(),
                    candidate: "x".into(),
                    references: vec![],
                    source: OWN_SOURCE.into(),
                    raw_scores: vec![],
                })
                .collect(),
        )
        .expect("unique ids");
        let (train, test) = crate::corpus::split(&corpus, spec).expect("valid split");
        let index: BTreeMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = |c: &Corpus| c.iter().map(|s| index[s.sample_id.as_str()]).collect();
        (rows(&train), rows(&test))
    }

    pub fn rows(&self, idx: &[usize]) -> (Matrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.x.row(i).to_vec()).collect();
        (
            Matrix::from_rows(&rows).expect("shape"),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

/// Samples per external dataset before zero filtering.
pub const EXTERNAL_COUNTS: [(&str, usize); 4] = [
    (VICR_SOURCE, 15_646),
    (FLICKR8K_EXPERT_SOURCE, 5_822),
    (FLICKR8K_CF_SOURCE, 47_829),
    (COMPOSITE_SOURCE, 11_992),
];
pub const EXTERNAL_TOTAL: usize = 81_289;
pub const EXTERNAL_ZEROS: usize = 21_974;

/// Zero-score rows per dataset: `zeros` spread in proportion to the dataset
/// sizes, largest remainder first.
pub fn zero_allocation(zeros: usize) -> Vec<usize> {
    let total: usize = EXTERNAL_COUNTS.iter().map(|k| k.1).sum();
    let exact: Vec<f64> = EXTERNAL_COUNTS
        .iter()
        .map(|k| zeros as f64 * k.1 as f64 / total as f64)
        .collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &i in order.iter().take(zeros - out.iter().sum::<usize>()) {
        out[i] += 1;
    }
    out
}

/// An external-style corpus of 81,289 samples in each dataset's native
/// scale, 21,974 of which map to a normalized score of 0. Samples are
/// shuffled so zeros are spread through the file.
pub fn external_fixture(seed: u64) -> Corpus {
    let mut rng = rng_for(seed, &[b"external"]);
    let zeros = zero_allocation(EXTERNAL_ZEROS);
    let mut samples = Vec::with_capacity(EXTERNAL_TOTAL);
    for ((source, count), n_zero) in EXTERNAL_COUNTS.iter().zip(zeros) {
        for k in 0..*count {
            let is_zero = k < n_zero;
            let raw_scores = native_scores(source, is_zero, &mut rng);
            let image = k / 5;
            samples.push(CaptionSample {
                sample_id: format!("{source}-{k:06}"),
                image_id: format!("{source}-img{image:05}"),
                model_id: format!("{source}-model"),
                candidate: "a caption".into(),
                references: vec!["a reference caption".into()],
                source: source.to_string(),
                raw_scores,
            });
        }
    }
    samples.shuffle(&mut rng);
    Corpus::new(samples).expect("unique ids")
}

fn native_scores(source: &str, zero: bool, rng: &mut ChaCha8Rng) -> Vec<RawScore> {
    let raw = |tagger: &str, score: f64| RawScore {
        tagger: tagger.to_string(),
        phase: 1,
        score,
    };
    match source {
        // integer 1..=5
        VICR_SOURCE => vec![raw(
            "vicr",
            if zero {
                1.0
            } else {
                rng.random_range(2..=5) as f64
            },
        )],
        // 1..=4
        FLICKR8K_EXPERT_SOURCE => (0..3)
            .map(|i| {
                raw(
                    &format!("expert{i}"),
                    if zero {
                        1.0
                    } else {
                        rng.random_range(2..=4) as f64
                    },
                )
            })
            .collect(),
        // fraction of yes votes, already in [0, 1]
        FLICKR8K_CF_SOURCE => vec![raw(
            "cf",
            if zero {
                0.0
            } else {
                rng.random_range(1..=3) as f64 / 3.0
            },
        )],
        _ => vec![
            raw(
                COMPOSITE_RELEVANCE,
                if zero {
                    1.0
                } else {
                    rng.random_range(2..=5) as f64
                },
            ),
            raw(
                COMPOSITE_THOROUGHNESS,
                if zero {
                    1.0
                } else {
                    rng.random_range(1..=5) as f64
                },
            ),
        ],
    }
}
