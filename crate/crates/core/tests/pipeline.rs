use std::collections::BTreeMap;

use vcr_core::agreement::{spearman_rho, PairedSeries};
use vcr_core::corpus::{aggregate, split, Aggregation, SplitSpec};
use vcr_core::gbr::TrainConfig;
use vcr_core::harness::{evaluate_corpus, EvalInputs, Metric};
use vcr_core::synthetic::{FeatureFixture, SyntheticWorld, WorldConfig};
use vcr_core::vcrscore::{build_pools, featurize_corpus, train_vcr, FeatureConfig, FeatureInputs};

fn rho(x: &[f64], y: &[f64]) -> f64 {
    spearman_rho(&PairedSeries::new(x.to_vec(), y.to_vec()).unwrap()).unwrap()
}

#[test]
fn learned_model_beats_each_feature_on_fixture() {
    let f = FeatureFixture::generate(600, 11);
    let (train, test) = f.split(&SplitSpec::own_data(11));
    assert_eq!((train.len(), test.len()), (240, 360));
    let (xtr, ytr) = f.rows(&train);
    let (xte, yte) = f.rows(&test);
    let model = train_vcr(
        &xtr,
        &FeatureConfig::default(),
        &ytr,
        &TrainConfig::default(),
    )
    .unwrap();
    let pred: Vec<f64> = xte
        .iter_rows()
        .map(|r| model.raw_predict(r).unwrap().clamp(0.0, 1.0))
        .collect();
    let learned = rho(&pred, &yte);
    for j in 0..4 {
        let col: Vec<f64> = xte.iter_rows().map(|r| r[j]).collect();
        let single = rho(&col, &yte);
        assert!(learned > single, "feature {j}: {single} >= {learned}");
    }
}

#[test]
fn learned_metric_beats_lexical_baseline_on_world() {
    let world = SyntheticWorld::generate(&WorldConfig::default());
    let (train, test) = split(&world.corpus, &SplitSpec::own_data(3)).unwrap();
    let config = FeatureConfig::default();
    let pools = build_pools(&train, Some(&world.detections), config.pool);
    let inputs = FeatureInputs {
        pools: &pools,
        embeddings: &world.mcip,
        channels: &world.channels,
    };
    let (_, x) = featurize_corpus(&train, &inputs, &config).unwrap();
    let y: Vec<f64> = aggregate(&train, 0)
        .unwrap()
        .iter()
        .map(|a| a.get(Aggregation::Mean))
        .collect();
    let model = train_vcr(&x, &config, &y, &TrainConfig::default()).unwrap();

    let eval = EvalInputs {
        mcip: Some(world.mcip.clone()),
        clip: Some(world.clip.clone()),
        bert: Some(world.bert.clone()),
        channels: world.channels.clone(),
        detections: Some(world.detections.clone()),
        model: Some(model),
        ..Default::default()
    };
    let metrics = [
        Metric::Bleu4,
        Metric::RougeL,
        Metric::Meteor,
        Metric::Cider,
        Metric::BertScore,
        Metric::ClipScore,
        Metric::McipScoreRef,
        Metric::Vilt,
        Metric::Precision,
        Metric::Recall,
        Metric::VcrScore,
    ];
    let report = evaluate_corpus(&test, &metrics, &eval).unwrap();
    let got: BTreeMap<_, _> = report.metrics_by_rho().into_iter().collect();
    eprintln!("{got:#?}");
    let vcr = got["vcrscore"];
    for m in Metric::LEXICAL {
        assert!(vcr > got[m.name()], "{m}: {} >= {vcr}", got[m.name()]);
    }
}
