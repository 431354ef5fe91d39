use rand::Rng;
use vcr_core::gbr::{
    best_split, fit, fit_traced, BoostedEnsemble, Matrix, TrainConfig, SSE_TIE_TOLERANCE,
};
use vcr_oracles::cases;
use vcr_oracles::gbr as oracle;

#[test]
fn split_search_matches_enumeration() {
    let mut rng = cases::rng(500);
    for case in 0..100 {
        let (rows, y) = cases::regression(&mut rng, 50, 3);
        let x = Matrix::from_rows(&rows).unwrap();
        let idx: Vec<usize> = (0..rows.len()).collect();
        let min_leaf = rng.random_range(1..=3);
        let got = best_split(&x, &y, &idx, min_leaf);
        let expected = oracle::best_split(&rows, &y, &idx, min_leaf, SSE_TIE_TOLERANCE);
        match (got, expected) {
            (None, None) => {}
            (Some(g), Some(e)) => {
                assert_eq!(g.feature, e.feature, "case {case}");
                assert!((g.threshold - e.threshold).abs() < 1e-12, "case {case}");
                assert!((g.sse - e.sse).abs() < 1e-9 * e.sse.max(1.0), "case {case}");
                let left: Vec<usize> = idx
                    .iter()
                    .copied()
                    .filter(|&i| rows[i][g.feature] <= g.threshold)
                    .collect();
                assert_eq!(left, e.left, "case {case}");
            }
            (g, e) => panic!("case {case}: {g:?} vs {e:?}"),
        }
    }
}

fn linear_fixture(n: usize, noise: f64, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = cases::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let y = rows
        .iter()
        .map(|r| 2.0 * r[0] - r[1] + noise * rng.random_range(-1.0..1.0))
        .collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn training_mse_never_increases() {
    let (x, y) = linear_fixture(200, 0.3, 1);
    let report = fit_traced(&x, &y, &TrainConfig::default()).unwrap();
    assert_eq!(report.train_mse.len(), 501);
    for w in report.train_mse.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn noiseless_fixture_is_memorised() {
    let (x, y) = linear_fixture(20, 0.0, 2);
    let cfg = TrainConfig {
        n_estimators: 2000,
        learning_rate: 0.3,
        max_depth: 4,
        min_samples_leaf: 1,
        ..Default::default()
    };
    let model = fit(&x, &y, &cfg).unwrap();
    let pred = model.predict(&x).unwrap();
    let mse = pred
        .iter()
        .zip(&y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    assert!(mse < 1e-6, "{mse}");
}

#[test]
fn serialized_model_predicts_identically() {
    let (x, y) = linear_fixture(200, 0.3, 3);
    let cfg = TrainConfig {
        n_estimators: 100,
        subsample: 0.8,
        seed: 9,
        ..Default::default()
    };
    let model = fit(&x, &y, &cfg).unwrap();
    let back = BoostedEnsemble::load(&model.serialize()).unwrap();
    let mut rng = cases::rng(4);
    for _ in 0..1000 {
        let row = [rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)];
        assert_eq!(
            model.predict_row(&row).unwrap().to_bits(),
            back.predict_row(&row).unwrap().to_bits()
        );
    }
}
