//! Seeded random instances shared by the oracle comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SCALE: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn value(rng: &mut ChaCha8Rng, tied: bool) -> f64 {
    if tied {
        SCALE[rng.random_range(0..SCALE.len())]
    } else {
        rng.random::<f64>()
    }
}

/// Units by raters with `None` for missing cells. Even cases draw from the
/// five-point scale (ties), odd ones from continuous values; every third
/// case has missing cells.
pub fn rating_matrix(rng: &mut ChaCha8Rng, case: usize) -> Vec<Vec<Option<f64>>> {
    let units = rng.random_range(2..=30);
    let raters = rng.random_range(2..=5);
    let tied = case.is_multiple_of(2);
    let missing = if case.is_multiple_of(3) {
        rng.random_range(0.05..0.35)
    } else {
        0.0
    };
    (0..units)
        .map(|_| {
            (0..raters)
                .map(|_| (!rng.random_bool(missing)).then(|| value(rng, tied)))
                .collect()
        })
        .collect()
}

/// Two paired series of length 2..=30; even cases carry ties.
pub fn paired(rng: &mut ChaCha8Rng, case: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..=30);
    let tied = case.is_multiple_of(2);
    let x = (0..n).map(|_| value(rng, tied)).collect();
    let y = (0..n).map(|_| value(rng, tied)).collect();
    (x, y)
}

/// Rows of `p` features with some integer-valued (tied) columns, and targets.
pub fn regression(rng: &mut ChaCha8Rng, max_n: usize, max_p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.random_range(2..=max_n);
    let p = rng.random_range(1..=max_p);
    let discrete: Vec<bool> = (0..p).map(|_| rng.random_bool(0.5)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            discrete
                .iter()
                .map(|&d| {
                    if d {
                        rng.random_range(0..6) as f64
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    let y = x
        .iter()
        .map(|r| r.iter().sum::<f64>() * 0.3 + rng.random_range(-0.5..0.5))
        .collect();
    (x, y)
}

/// A random vocabulary and word lists drawn from it.
#[derive(Debug, Clone)]
pub struct PoolCase {
    pub references: Vec<Vec<String>>,
    pub detections: Vec<Vec<String>>,
    pub candidate: Vec<String>,
}

pub fn pool_case(rng: &mut ChaCha8Rng) -> PoolCase {
    let size = rng.random_range(2..=40);
    let vocab: Vec<String> = (0..size)
        .map(|i| {
            let len = rng.random_range(1..=6);
            let word: String = (0..len)
                .map(|_| rng.random_range(b'a'..=b'z') as char)
                .collect();
            format!("{word}{i}")
        })
        .collect();
    let words = |lo: usize, hi: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.random_range(lo..=hi);
        (0..n)
            .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
            .collect()
    };
    let n_refs = rng.random_range(1..=5);
    let references = (0..n_refs).map(|_| words(1, 12, rng)).collect();
    let n_det = rng.random_range(0..=3);
    let detections = (0..n_det).map(|_| words(0, 4, rng)).collect();
    let candidate = words(1, 15, rng);
    PoolCase {
        references,
        detections,
        candidate,
    }
}

/// Five images with references and one candidate each.
pub const CIDER_TOY: [(&str, &str, [&str; 3]); 5] = [
    (
        "img1",
        "a dog on the grass",
        [
            "a dog on the grass",
            "a brown dog in a park",
            "the dog sat on green grass",
        ],
    ),
    (
        "img2",
        "a man with a red hat",
        [
            "a man in a red hat",
            "the man with a hat",
            "a tall man in the street",
        ],
    ),
    (
        "img3",
        "two cats on a bed",
        [
            "two cats on a bed",
            "a cat on the bed",
            "the cats sleep on a red bed",
        ],
    ),
    (
        "img4",
        "a boat in the sea",
        [
            "a small boat on the sea",
            "a boat in blue water",
            "the boat is in the sea",
        ],
    ),
    (
        "img5",
        "a red car in the street",
        [
            "a red car on the street",
            "the car is red",
            "a car in a busy street",
        ],
    ),
];
