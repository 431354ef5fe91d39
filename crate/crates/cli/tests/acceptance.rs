//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p vcr-cli --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use vcr_annotate::http::spawn;
use vcr_annotate::{AnnotationService, ServiceConfig};
use vcr_core::agreement::{
    kendall_tau, krippendorff_alpha, pair_counts, spearman_rho, tagging_agreement, Level,
    PairedSeries, RatingMatrix, TauVariant,
};
use vcr_core::corpus::{
    aggregate, filter_zero_scores, mean, normalize_scores, read_corpus, split, Aggregation,
    CaptionSample, Corpus, CorpusFormat, NormalizationRule, SplitSpec, SCALE,
};
use vcr_core::gbr::{
    best_split, fit, fit_traced, BoostedEnsemble, Matrix, TrainConfig, SSE_TIE_TOLERANCE,
};
use vcr_core::harness::{
    correlation_table, evaluate_corpus, rank_models, EvalInputs, Metric, ViewKind,
};
use vcr_core::lexical::{
    bleu4, cider, meteor, rouge_l, stem, tokenize, CiderInput, TokenSeq, DEFAULT_ROUGE_BETA,
};
use vcr_core::pool_metric::{build_pool, precision_recall, DetectionLabels, PoolConfig, WordPool};
use vcr_core::synthetic::{
    external_fixture, FeatureFixture, SyntheticWorld, WorldConfig, EXTERNAL_TOTAL,
};
use vcr_core::vcrscore::{build_pools, featurize_corpus, train_vcr, FeatureConfig, FeatureInputs};
use vcr_oracles::{
    cases, gbr as gbr_oracle, lexical as lex_oracle, pool as pool_oracle, stats as stats_oracle,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rho(x: &[f64], y: &[f64]) -> f64 {
    spearman_rho(&PairedSeries::new(x.to_vec(), y.to_vec()).unwrap()).unwrap()
}

fn statistics() -> Outcome {
    let levels = [
        (Level::Nominal, stats_oracle::Level::Nominal),
        (Level::Ordinal, stats_oracle::Level::Ordinal),
        (Level::Interval, stats_oracle::Level::Interval),
    ];
    let mut rng = cases::rng(101);
    let mut compared = 0;
    for case in 0..200 {
        let units = cases::rating_matrix(&mut rng, case);
        for (level, olevel) in levels {
            let expected = stats_oracle::krippendorff_alpha(&units, olevel);
            let got = RatingMatrix::new(units.clone(), level).and_then(|m| krippendorff_alpha(&m));
            match (expected, got) {
                (Some(e), Ok(g)) => {
                    ensure!(close(e, g, 1e-9), "alpha case {case} {level:?}: {g} vs {e}");
                    compared += 1;
                }
                (None, Err(_)) => {}
                (e, g) => {
                    return Err(format!(
                        "alpha case {case} {level:?}: oracle {e:?}, engine {g:?}"
                    ))
                }
            }
        }
    }
    let mut rng = cases::rng(202);
    for case in 0..200 {
        let (x, y) = cases::paired(&mut rng, case);
        let s = PairedSeries::new(x.clone(), y.clone()).unwrap();
        let c = pair_counts(&s);
        let p = stats_oracle::pairs(&x, &y);
        ensure!(
            (c.concordant, c.discordant, c.tied_x, c.tied_y)
                == (p.concordant, p.discordant, p.tied_x, p.tied_y),
            "tau pair counts case {case}"
        );
        ensure!(
            close(
                kendall_tau(&s, TauVariant::A).unwrap(),
                stats_oracle::tau_a(&x, &y),
                1e-9
            ),
            "tau-a case {case}"
        );
        match (kendall_tau(&s, TauVariant::B), stats_oracle::tau_b(&x, &y)) {
            (Ok(g), Some(e)) => ensure!(close(g, e, 1e-9), "tau-b case {case}: {g} vs {e}"),
            (Err(_), None) => {}
            (g, e) => return Err(format!("tau-b case {case}: {g:?} vs {e:?}")),
        }
        match (spearman_rho(&s), stats_oracle::spearman(&x, &y)) {
            (Ok(g), Some(e)) => ensure!(close(g, e, 1e-9), "rho case {case}: {g} vs {e}"),
            (Err(_), None) => {}
            (g, e) => return Err(format!("rho case {case}: {g:?} vs {e:?}")),
        }
    }
    let hand = RatingMatrix::from_raters(
        &[
            vec![Some(0.0), Some(0.0), Some(1.0)],
            vec![Some(0.0), Some(1.0), Some(1.0)],
        ],
        Level::Nominal,
    )
    .and_then(|m| krippendorff_alpha(&m))
    .map_err(|e| e.to_string())?;
    ensure!(close(hand, 0.4444, 1e-4), "hand case alpha {hand}");
    Ok(format!(
        "{compared} alpha comparisons, 200 tau/rho cases, hand case {hand:.4}"
    ))
}

/// Index of `b` in `all_sequences(3, _)`: shorter sequences first, then
/// lexicographic.
fn sequence_index(b: &[u8]) -> usize {
    let offset = (3usize.pow(b.len() as u32) - 1) / 2;
    offset + b.iter().fold(0, |acc, &c| acc * 3 + c as usize)
}

fn lexical() -> Outcome {
    for text in [
        "a dog runs in the park",
        "two men ride horses on a beach at dawn",
        "red bus near stop",
    ] {
        let t = tokenize(text);
        let refs = [t.clone()];
        ensure!(bleu4(&t, &refs).unwrap() == 1.0, "bleu identity `{text}`");
        ensure!(
            rouge_l(&t, &refs, DEFAULT_ROUGE_BETA).unwrap() == 1.0,
            "rouge identity `{text}`"
        );
        let expected = 1.0 - 0.5 / (t.len() as f64).powi(3);
        let got = meteor(&t, &refs).unwrap();
        ensure!(
            close(got, expected, 1e-12),
            "meteor identity `{text}`: {got} vs {expected}"
        );
    }

    let all = lex_oracle::all_sequences(3, 8);
    let seqs: Vec<TokenSeq> = all
        .iter()
        .map(|s| TokenSeq::from_tokens(s.iter().map(|c| ["a", "b", "c"][*c as usize])))
        .collect();
    let mut pairs = 0u64;
    let mut mismatch = None;
    for (ia, a) in all.iter().enumerate() {
        let cand = &seqs[ia];
        lex_oracle::lcs_against_all(a, 3, 8, &mut |b, lcs| {
            let reference = std::slice::from_ref(&seqs[sequence_index(b)]);
            let got = rouge_l(cand, reference, DEFAULT_ROUGE_BETA).unwrap();
            let expected = lex_oracle::rouge_f(lcs, a.len(), b.len(), DEFAULT_ROUGE_BETA);
            if (got - expected).abs() > 1e-12 && mismatch.is_none() {
                mismatch = Some(format!("{a:?} vs {b:?}: {got} vs {expected}"));
            }
            pairs += 1;
        });
        if let Some(m) = mismatch {
            return Err(format!("rouge-l {m}"));
        }
    }

    let inputs: Vec<CiderInput> = cases::CIDER_TOY
        .iter()
        .map(|(img, cand, refs)| CiderInput {
            image_id: img.to_string(),
            candidate: tokenize(cand),
            references: refs.iter().map(|r| tokenize(r)).collect(),
        })
        .collect();
    let stemmed = |t: &TokenSeq| t.iter().map(|w| stem(w)).collect::<Vec<_>>();
    let docs: Vec<lex_oracle::CiderDoc> = inputs
        .iter()
        .map(|i| lex_oracle::CiderDoc {
            image_id: i.image_id.clone(),
            candidate: stemmed(&i.candidate),
            references: i.references.iter().map(stemmed).collect(),
        })
        .collect();
    let images: std::collections::BTreeSet<_> = inputs.iter().map(|i| &i.image_id).collect();
    let got = cider(&inputs);
    let expected = lex_oracle::cider(&docs);
    for (g, e) in got.scores.iter().zip(&expected) {
        ensure!(close(*g, *e, 1e-9), "cider {g} vs {e}");
    }
    Ok(format!(
        "{pairs} rouge pairs, cider on {} images",
        images.len()
    ))
}

fn pool() -> Outcome {
    let mut rng = cases::rng(900);
    for case in 0..1000 {
        let c = cases::pool_case(&mut rng);
        let refs: Vec<TokenSeq> = c
            .references
            .iter()
            .cloned()
            .map(TokenSeq::from_tokens)
            .collect();
        let dets = vec![DetectionLabels {
            image_id: "img".into(),
            detector: "det".into(),
            labels: c.detections.iter().flatten().cloned().collect(),
        }];
        let pool = build_pool("img", &refs, &dets, PoolConfig::default());
        let mut sources = c.references.clone();
        sources.extend(c.detections.iter().cloned());
        let expected = pool_oracle::precision_recall(&c.candidate, &sources).unwrap();
        let got = precision_recall(&TokenSeq::from_tokens(c.candidate.clone()), &pool).unwrap();
        ensure!(
            (got.overlap, got.precision, got.recall) == expected,
            "case {case}: {got:?} vs {expected:?}"
        );
        ensure!(
            (0.0..=1.0).contains(&got.precision) && (0.0..=1.0).contains(&got.recall),
            "case {case} out of [0, 1]"
        );
    }
    let pool = WordPool {
        image_id: "img".into(),
        words: ["a", "dog", "sleeps", "park", "grass"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    let ex = precision_recall(&tokenize("a dog runs fast"), &pool).unwrap();
    ensure!(
        (ex.overlap, ex.precision, ex.recall) == (2, 0.5, 0.4),
        "documented example gave {ex:?}"
    );
    Ok("1000 vocabularies, example r=2 p=0.5 r=0.4".into())
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

fn gbr() -> Outcome {
    let (x, y) = linear_fixture(200, 0.3, 1);
    let trace = fit_traced(&x, &y, &TrainConfig::default()).map_err(|e| e.to_string())?;
    ensure!(
        trace.train_mse.len() == 501,
        "{} stages traced",
        trace.train_mse.len()
    );
    for (i, w) in trace.train_mse.windows(2).enumerate() {
        ensure!(
            w[1] <= w[0],
            "(a) mse rose at stage {}: {} -> {}",
            i + 1,
            w[0],
            w[1]
        );
    }

    let (x, y) = linear_fixture(20, 0.0, 2);
    let cfg = TrainConfig {
        n_estimators: 2000,
        learning_rate: 0.3,
        max_depth: 4,
        min_samples_leaf: 1,
        ..Default::default()
    };
    let model = fit(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let pred = model.predict(&x).unwrap();
    let mse = pred
        .iter()
        .zip(&y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    ensure!(mse < 1e-6, "(b) noiseless mse {mse}");

    let mut rng = cases::rng(500);
    for case in 0..100 {
        let (rows, y) = cases::regression(&mut rng, 50, 3);
        let x = Matrix::from_rows(&rows).unwrap();
        let idx: Vec<usize> = (0..rows.len()).collect();
        let min_leaf = rng.random_range(1..=3);
        let got = best_split(&x, &y, &idx, min_leaf);
        let expected = gbr_oracle::best_split(&rows, &y, &idx, min_leaf, SSE_TIE_TOLERANCE);
        match (got, expected) {
            (None, None) => {}
            (Some(g), Some(e)) => {
                let left: Vec<usize> = idx
                    .iter()
                    .copied()
                    .filter(|&i| rows[i][g.feature] <= g.threshold)
                    .collect();
                ensure!(
                    g.feature == e.feature && g.threshold == e.threshold && left == e.left,
                    "(c) case {case}: {g:?} vs {e:?}"
                );
                ensure!(
                    close(g.sse, e.sse, 1e-9 * e.sse.max(1.0)),
                    "(c) case {case} sse"
                );
            }
            (g, e) => return Err(format!("(c) case {case}: {g:?} vs {e:?}")),
        }
    }

    let (x, y) = linear_fixture(200, 0.3, 3);
    let cfg = TrainConfig {
        n_estimators: 100,
        subsample: 0.8,
        seed: 9,
        ..Default::default()
    };
    let model = fit(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let back = BoostedEnsemble::load(&model.serialize()).map_err(|e| e.to_string())?;
    let mut rng = cases::rng(4);
    for i in 0..1000 {
        let row = [rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)];
        ensure!(
            model.predict_row(&row).unwrap().to_bits() == back.predict_row(&row).unwrap().to_bits(),
            "(d) row {i} differs after reload"
        );
    }
    Ok(format!(
        "final mse {:.4}, noiseless mse {mse:.2e}",
        trace.train_mse[500]
    ))
}

fn vcrscore() -> Outcome {
    let fixture = FeatureFixture::generate(600, 11);
    let (train, test) = fixture.split(&SplitSpec::own_data(11));
    ensure!(
        (train.len(), test.len()) == (240, 360),
        "split {}/{}",
        train.len(),
        test.len()
    );
    let (xtr, ytr) = fixture.rows(&train);
    let (xte, yte) = fixture.rows(&test);
    ensure!(xtr.cols() == 4, "{} features", xtr.cols());
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut learned = 0.0;
    for run in 0..2 {
        let model = train_vcr(
            &xtr,
            &FeatureConfig::default(),
            &ytr,
            &TrainConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("model{run}.json"));
        model.save(&path).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&path).unwrap());
        let pred: Vec<f64> = xte
            .iter_rows()
            .map(|r| model.raw_predict(r).unwrap().clamp(0.0, 1.0))
            .collect();
        learned = rho(&pred, &yte);
    }
    ensure!(files[0] == files[1], "model files differ between runs");
    let mut best = f64::NEG_INFINITY;
    for j in 0..4 {
        let col: Vec<f64> = xte.iter_rows().map(|r| r[j]).collect();
        let single = rho(&col, &yte);
        ensure!(
            learned > single,
            "feature {j} rho {single:.4} >= learned {learned:.4}"
        );
        best = best.max(single);
    }
    Ok(format!("learned rho {learned:.4}, best feature {best:.4}"))
}

fn corpus_protocol() -> Outcome {
    let m = mean(&[0.25, 0.50, 0.25, 0.50, 0.50, 0.50, 0.25, 0.50]);
    ensure!(m == 0.40625 && format!("{m:.4}") == "0.4062", "mean {m}");

    let raw = external_fixture(5);
    ensure!(raw.len() == EXTERNAL_TOTAL, "fixture size {}", raw.len());
    let normalized =
        normalize_scores(&raw, &NormalizationRule::standard_set()).map_err(|e| e.to_string())?;
    let filtered = filter_zero_scores(&normalized);
    ensure!(
        (filtered.corpus.len(), filtered.removed) == (59_315, 21_974),
        "filter kept {} removed {}",
        filtered.corpus.len(),
        filtered.removed
    );
    let (train, test) =
        split(&filtered.corpus, &SplitSpec::external(5)).map_err(|e| e.to_string())?;
    ensure!(
        train.len().abs_diff(41_521) <= 1 && test.len().abs_diff(17_794) <= 1,
        "external split {}/{}",
        train.len(),
        test.len()
    );

    let world = SyntheticWorld::generate(&WorldConfig::default());
    let (own_train, own_test) =
        split(&world.corpus, &SplitSpec::own_data(5)).map_err(|e| e.to_string())?;
    ensure!(
        own_train.len().abs_diff(240) <= 1 && own_test.len().abs_diff(360) <= 1,
        "own split {}/{}",
        own_train.len(),
        own_test.len()
    );
    Ok(format!(
        "mean {m}, {} -> {} ({} removed), {}/{}, {}/{}",
        raw.len(),
        filtered.corpus.len(),
        filtered.removed,
        own_train.len(),
        own_test.len(),
        train.len(),
        test.len()
    ))
}

fn report_tables() -> Outcome {
    let world = SyntheticWorld::generate(&WorldConfig::default());
    let (train, test) = split(&world.corpus, &SplitSpec::own_data(3)).map_err(|e| e.to_string())?;
    let config = FeatureConfig::default();
    let pools = build_pools(&train, Some(&world.detections), config.pool);
    let inputs = FeatureInputs {
        pools: &pools,
        embeddings: &world.mcip,
        channels: &world.channels,
    };
    let (_, x) = featurize_corpus(&train, &inputs, &config).map_err(|e| e.to_string())?;
    let y: Vec<f64> = aggregate(&train, 0)
        .unwrap()
        .iter()
        .map(|a| a.get(Aggregation::Mean))
        .collect();
    let model = train_vcr(&x, &config, &y, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let eval = EvalInputs {
        mcip: Some(world.mcip.clone()),
        clip: Some(world.clip.clone()),
        bert: Some(world.bert.clone()),
        channels: world.channels.clone(),
        detections: Some(world.detections.clone()),
        model: Some(model),
        ..Default::default()
    };
    let metrics = vcr_core::harness::available_metrics(&eval);
    let own = evaluate_corpus(&test, &metrics, &eval).map_err(|e| e.to_string())?;
    let train_report = evaluate_corpus(&train, &metrics, &eval).map_err(|e| e.to_string())?;
    let vcr = own
        .correlation("vcrscore")
        .ok_or("no vcrscore correlation")?;
    let mut best_lexical = f64::NEG_INFINITY;
    for m in Metric::LEXICAL {
        let r = own
            .correlation(m.name())
            .ok_or_else(|| format!("no {m} correlation"))?;
        ensure!(vcr > r, "{m} rho {r:.4} >= vcrscore {vcr:.4}");
        best_lexical = best_lexical.max(r);
    }

    let table = correlation_table(&[("own test", &own), ("own train", &train_report)]);
    let lines: Vec<&str> = table.lines().collect();
    ensure!(
        lines[0] == "metric,own test,own train",
        "header `{}`",
        lines[0]
    );
    ensure!(
        lines.len() == metrics.len() + 1,
        "{} correlation rows for {} metrics",
        lines.len() - 1,
        metrics.len()
    );
    ensure!(own.heatmap.len() == 6, "{} heatmap rows", own.heatmap.len());
    for view in ViewKind::ALL {
        let v = rank_models(&world.corpus, view, 3, None).map_err(|e| e.to_string())?;
        ensure!(
            v.totals.len() == 6 && v.ranking.len() == 6,
            "{} view shape",
            view.name()
        );
    }
    Ok(format!(
        "not reproducible without the original data; smoke: vcrscore {vcr:.4} > best lexical {best_lexical:.4}"
    ))
}

const TAGGERS: [&str; 4] = ["tagger1", "tagger2", "tagger3", "tagger4"];

fn opinion(sample: usize, tagger: usize, phase: u32) -> f64 {
    let base = (sample * 7 + 3) % 5;
    let v = match (sample * 13 + tagger * 5 + phase as usize * 3) % 7 {
        0 => base.saturating_sub(1),
        1 => (base + 1).min(4),
        _ => base,
    };
    SCALE[v]
}

async fn drive(addr: SocketAddr, tagger: usize, phase: u32) -> Result<(usize, usize), String> {
    let client = reqwest::Client::new();
    let name = TAGGERS[tagger];
    let (mut accepted, mut duplicates) = (0, 0);
    loop {
        let item: Value = client
            .get(format!("http://{addr}/api/next"))
            .query(&[("tagger", name), ("phase", &phase.to_string())])
            .send()
            .await
            .map_err(|e| e.to_string())?
            .json()
            .await
            .map_err(|e| e.to_string())?;
        if item["status"] == "done" {
            return Ok((accepted, duplicates));
        }
        let id = item["sample_id"]
            .as_str()
            .ok_or("item without sample_id")?
            .to_string();
        let k: usize = id[1..].parse().unwrap();
        let body = json!({"sample_id": id, "tagger_id": name, "phase": phase, "score": opinion(k, tagger, phase)});
        let posts = if accepted % 25 == 0 { 2 } else { 1 };
        for _ in 0..posts {
            let r = client
                .post(format!("http://{addr}/api/score"))
                .json(&body)
                .send()
                .await
                .map_err(|e| e.to_string())?;
            match r.status().as_u16() {
                200 => accepted += 1,
                409 => duplicates += 1,
                s => return Err(format!("unexpected status {s}")),
            }
        }
    }
}

async fn annotation_run() -> Outcome {
    let n = 600;
    let corpus = Corpus::new(
        (0..n)
            .map(|i| CaptionSample {
                sample_id: format!("s{i:03}"),
                image_id: format!("img{:03}", i / 6),
                model_id: format!("m{}", i % 6),
                candidate: format!("caption {i}"),
                references: vec!["a reference".into()],
                source: "own".into(),
                raw_scores: vec![],
            })
            .collect(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        seed: 11,
        taggers: TAGGERS.iter().map(|t| t.to_string()).collect(),
        ..Default::default()
    };
    let svc = Arc::new(AnnotationService::open(corpus, cfg).map_err(|e| e.to_string())?);
    let addr = spawn("127.0.0.1:0".parse().unwrap(), svc.clone())
        .await
        .map_err(|e| e.to_string())?;
    let client = reqwest::Client::new();
    let (mut accepted, mut duplicates) = (0, 0);
    for phase in [1, 2] {
        if phase == 2 {
            let r = client
                .post(format!("http://{addr}/api/phase"))
                .json(&json!({"phase": 2}))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            ensure!(r.status().is_success(), "opening phase 2: {}", r.status());
        }
        let runs: Vec<_> = (0..4)
            .map(|t| tokio::spawn(drive(addr, t, phase)))
            .collect();
        for r in runs {
            let (a, d) = r.await.map_err(|e| e.to_string())??;
            accepted += a;
            duplicates += d;
        }
    }
    ensure!(accepted == 4800, "{accepted} accepted");
    ensure!(
        svc.events().len() == 4800,
        "{} events logged",
        svc.events().len()
    );

    let text = client
        .get(format!("http://{addr}/api/export"))
        .send()
        .await
        .map_err(|e| e.to_string())?
        .text()
        .await
        .map_err(|e| e.to_string())?;
    let exported =
        read_corpus(text.as_bytes(), CorpusFormat::JsonLines).map_err(|e| e.to_string())?;
    let mut got = BTreeMap::new();
    for s in &exported {
        for r in &s.raw_scores {
            ensure!(
                got.insert((s.sample_id.clone(), r.tagger.clone(), r.phase), r.score)
                    .is_none(),
                "duplicate score in export for {}",
                s.sample_id
            );
        }
    }
    let mut expected = BTreeMap::new();
    for k in 0..n {
        for (t, name) in TAGGERS.iter().enumerate() {
            for phase in [1, 2] {
                expected.insert(
                    (format!("s{k:03}"), name.to_string(), phase),
                    opinion(k, t, phase),
                );
            }
        }
    }
    ensure!(got == expected, "export differs from submitted scores");
    ensure!(
        exported == svc.export_corpus(),
        "re-ingested export differs from the service corpus"
    );

    let live: Value = client
        .get(format!("http://{addr}/api/agreement"))
        .send()
        .await
        .map_err(|e| e.to_string())?
        .json()
        .await
        .map_err(|e| e.to_string())?;
    let offline =
        serde_json::to_value(tagging_agreement(&exported, Level::Interval, TauVariant::B)).unwrap();
    ensure!(
        live == offline,
        "live agreement differs from the agreement module"
    );
    let ids: Vec<usize> = (0..n).collect();
    for (t, name) in TAGGERS.iter().enumerate() {
        let col = |p: u32| {
            ids.iter()
                .map(|&k| Some(opinion(k, t, p)))
                .collect::<Vec<_>>()
        };
        let alpha = krippendorff_alpha(
            &RatingMatrix::from_raters(&[col(1), col(2)], Level::Interval).unwrap(),
        )
        .unwrap();
        let row = live["taggers"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["tagger"] == *name)
            .ok_or("missing tagger row")?;
        ensure!(
            row["alpha"]["value"].as_f64() == Some(alpha),
            "{name} alpha {} vs {alpha}",
            row["alpha"]
        );
    }
    Ok(format!(
        "{accepted} accepted, {duplicates} duplicates rejected"
    ))
}

fn annotation() -> Outcome {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap()
        .block_on(annotation_run())
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "statistics oracle suite",
            limit: Some(Duration::from_secs(10)),
            run: statistics,
        },
        Criterion {
            name: "lexical metric suite",
            limit: Some(Duration::from_secs(30)),
            run: lexical,
        },
        Criterion {
            name: "pool metric",
            limit: None,
            run: pool,
        },
        Criterion {
            name: "gradient boosting",
            limit: Some(Duration::from_secs(60)),
            run: gbr,
        },
        Criterion {
            name: "vcrscore pipeline",
            limit: Some(Duration::from_secs(120)),
            run: vcrscore,
        },
        Criterion {
            name: "corpus protocol",
            limit: None,
            run: corpus_protocol,
        },
        Criterion {
            name: "report tables",
            limit: None,
            run: report_tables,
        },
        Criterion {
            name: "annotation service",
            limit: Some(Duration::from_secs(60)),
            run: annotation,
        },
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {elapsed:.1?}, limit {limit:?}"))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<26} {:>8.2?}  {detail}", c.name, elapsed),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<26} {:>8.2?}  {why}", c.name, elapsed);
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
