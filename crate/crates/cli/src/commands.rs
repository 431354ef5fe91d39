use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use vcr_annotate::{AnnotationService, ServiceConfig};
use vcr_core::agreement::{tagging_agreement, Cell};
use vcr_core::corpus::{
    aggregate_sample, filter_zero_scores, ingest_corpus, normalize_scores, split, write_corpus,
    Aggregation, Corpus, CorpusFormat, NormalizationRule, SplitSpec,
};
use vcr_core::embed_metrics::{
    decode_binary_table, load_embeddings, load_score_channel, EmbeddingKind, EmbeddingStore,
};
use vcr_core::gbr::Matrix;
use vcr_core::harness::{
    available_metrics, correlation_table, emit_report, evaluate_corpus, rank_models, EvalInputs,
    Metric, ViewKind,
};
use vcr_core::pool_metric::load_detections;
use vcr_core::vcrscore::{build_pools, featurize, train_vcr, FeatureInputs, VcrModel};

use crate::config::FileConfig;
use crate::{Cli, Command, InputArgs, Partition};

/// Settings shared by every subcommand after merging flags and the file.
struct Settings {
    file: FileConfig,
    corpus: Option<PathBuf>,
    seed: u64,
}

impl Settings {
    fn corpus(&self) -> Result<Corpus> {
        let path = self.corpus.as_ref().ok_or_else(|| {
            anyhow!("no corpus given (--corpus, VCREVAL_CORPUS or `corpus` in the config file)")
        })?;
        ingest_corpus(path, CorpusFormat::JsonLines)
            .with_context(|| format!("reading corpus {}", path.display()))
    }

    fn split_spec(&self, fraction: Option<f64>) -> SplitSpec {
        let default = SplitSpec::own_data(self.seed);
        SplitSpec::new(
            fraction
                .or(self.file.train_fraction)
                .unwrap_or(default.train_fraction),
            self.seed,
        )
    }

    fn human(&self, args: &InputArgs) -> Aggregation {
        args.human.or(self.file.human).unwrap_or(Aggregation::Mean)
    }

    /// Embedding stores, channels and detections from flags plus the file.
    fn eval_inputs(&self, args: &InputArgs) -> Result<EvalInputs> {
        let mut embeddings: BTreeMap<String, PathBuf> = self.file.embeddings.clone();
        for spec in &args.embeddings {
            let (k, v) = pair(spec)?;
            embeddings.insert(k, v.into());
        }
        let mut channels: BTreeMap<String, PathBuf> = self.file.channels.clone();
        for spec in &args.channels {
            let (k, v) = pair(spec)?;
            channels.insert(k, v.into());
        }
        let mut inputs = EvalInputs {
            human: self.human(args),
            seed: self.seed,
            pool: self.file.features.pool,
            clip_weight: self.file.features.clip_weight,
            ..Default::default()
        };
        for (key, path) in &embeddings {
            let (family, kind) = match key.split_once('.') {
                Some((f, k)) => (f, Some(k.parse::<EmbeddingKind>().map_err(|e| anyhow!(e))?)),
                None => (key.as_str(), None),
            };
            let slot = match family {
                "clip" => &mut inputs.clip,
                "mcip" => &mut inputs.mcip,
                "bert" => &mut inputs.bert,
                other => bail!("unknown embedding family `{other}` (expected clip, mcip or bert)"),
            };
            let store = load_store(path, kind)?;
            match slot {
                Some(existing) => existing.merge(store)?,
                None => *slot = Some(store),
            }
        }
        for (name, path) in &channels {
            let ch = load_score_channel(path, name)
                .with_context(|| format!("reading channel {}", path.display()))?;
            inputs.channels.insert(name.clone(), ch);
        }
        if let Some(path) = args.detections.as_ref().or(self.file.detections.as_ref()) {
            inputs.detections = Some(
                load_detections(path)
                    .with_context(|| format!("reading detections {}", path.display()))?,
            );
        }
        Ok(inputs)
    }
}

fn pair(spec: &str) -> Result<(String, String)> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("expected NAME=PATH, got `{spec}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_store(path: &Path, kind: Option<EmbeddingKind>) -> Result<EmbeddingStore> {
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "json" | "ndjson")
    );
    let ctx = || format!("reading embeddings {}", path.display());
    match kind {
        Some(kind) if !is_jsonl => {
            let bytes = fs::read(path).with_context(ctx)?;
            let table = decode_binary_table(&bytes, kind).with_context(ctx)?;
            let mut store = EmbeddingStore::default();
            match kind {
                EmbeddingKind::Image => store.image = Some(table),
                EmbeddingKind::Caption => store.caption = Some(table),
                EmbeddingKind::Tokens => store.tokens = Some(table),
            }
            Ok(store)
        }
        _ => load_embeddings(path).with_context(ctx),
    }
}

fn metric_list(spec: Option<&str>, inputs: &EvalInputs) -> Result<Vec<Metric>> {
    match spec {
        Some(s) => Ok(Metric::parse_list(s)?),
        None => Ok(available_metrics(inputs)),
    }
}

fn fmt_cell(c: &Cell) -> String {
    match c {
        Cell::Value(v) => format!("{v:.4}"),
        Cell::Insufficient(_) => "n/a".into(),
    }
}

fn open_out(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Runs one parsed command line, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Settings {
        corpus: cli.corpus.clone().or_else(|| file.corpus.clone()),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    match cli.command {
        Command::Ingest {
            input,
            normalize,
            filter_zeros,
            out: dest,
        } => {
            let path = input
                .or_else(|| ctx.corpus.clone())
                .ok_or_else(|| anyhow!("no input corpus given"))?;
            let mut corpus = ingest_corpus(&path, CorpusFormat::JsonLines)
                .with_context(|| format!("reading corpus {}", path.display()))?;
            writeln!(out, "samples\t{}", corpus.len())?;
            for (source, n) in corpus.counts_by_source() {
                writeln!(out, "source {source}\t{n}")?;
            }
            writeln!(out, "images\t{}", corpus.image_ids().len())?;
            writeln!(out, "models\t{}", corpus.model_ids().join(","))?;
            if normalize {
                corpus = normalize_scores(&corpus, &NormalizationRule::standard_set())?;
            }
            if filter_zeros {
                let f = filter_zero_scores(&corpus);
                writeln!(out, "zero-score samples removed\t{}", f.removed)?;
                writeln!(out, "samples kept\t{}", f.corpus.len())?;
                corpus = f.corpus;
            }
            if let Some(dest) = dest {
                let w = BufWriter::new(
                    File::create(&dest).with_context(|| format!("creating {}", dest.display()))?,
                );
                write_corpus(&corpus, w)?;
                writeln!(out, "wrote\t{}", dest.display())?;
            }
        }
        Command::Score {
            metrics,
            inputs,
            model_file,
            out: dest,
        } => {
            let corpus = ctx.corpus()?;
            let mut eval = ctx.eval_inputs(&inputs)?;
            if let Some(p) = model_file.as_ref().or(ctx.file.model_file.as_ref()) {
                eval.model = Some(VcrModel::load(p)?);
            }
            let metrics = metric_list(metrics.as_deref().or(ctx.file.metrics.as_deref()), &eval)?;
            let report = evaluate_corpus(&corpus, &metrics, &eval)?;
            let mut w = open_out(dest.as_ref())?;
            for row in &report.rows {
                let scores: serde_json::Map<String, serde_json::Value> = report
                    .metrics
                    .iter()
                    .zip(&row.scores)
                    .map(|(m, v)| (m.clone(), serde_json::json!(v)))
                    .collect();
                let line = serde_json::json!({
                    "sample_id": row.sample_id,
                    "image_id": row.image_id,
                    "model_id": row.model_id,
                    "human": row.human,
                    "scores": scores,
                });
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
        }
        Command::Train {
            out_model,
            train_fraction,
            clip_feature,
            n_estimators,
            inputs,
        } => {
            let corpus = ctx.corpus()?;
            let eval = ctx.eval_inputs(&inputs)?;
            let mut features = ctx.file.features.clone();
            if let Some(c) = clip_feature {
                features.clip_feature = c;
            }
            let mut gbr = ctx.file.gbr;
            gbr.seed = ctx.seed;
            if let Some(n) = n_estimators {
                gbr.n_estimators = n;
            }
            let (train, test) = split(&corpus, &ctx.split_spec(train_fraction))?;
            let human = ctx.human(&inputs);
            let store = if features.clip_feature.uses_mcip() {
                &eval.mcip
            } else {
                &eval.clip
            };
            let store = store.as_ref().ok_or_else(|| {
                anyhow!(
                    "{} embeddings are required for the {} feature",
                    if features.clip_feature.uses_mcip() {
                        "mcip"
                    } else {
                        "clip"
                    },
                    features.clip_feature.feature_name()
                )
            })?;
            let pools = build_pools(&train, eval.detections.as_ref(), features.pool);
            let fi = FeatureInputs {
                pools: &pools,
                embeddings: store,
                channels: &eval.channels,
            };
            let (mut data, mut y) = (Vec::new(), Vec::new());
            let mut skipped = 0;
            for s in &train {
                let Ok(agg) = aggregate_sample(s, ctx.seed) else {
                    skipped += 1;
                    continue;
                };
                data.extend(featurize(s, &fi, &features)?.values);
                y.push(agg.get(human));
            }
            if y.is_empty() {
                bail!("no training sample carries human scores");
            }
            let x = Matrix::new(y.len(), features.schema().len(), data)?;
            let model = train_vcr(&x, &features, &y, &gbr)?;
            model.save(&out_model)?;
            writeln!(out, "train samples\t{}", y.len())?;
            if skipped > 0 {
                writeln!(out, "skipped (no human scores)\t{skipped}")?;
            }
            writeln!(out, "features\t{}", model.schema.names.join(","))?;
            writeln!(
                out,
                "final train mse\t{:.6}",
                model.train_mse.last().copied().unwrap_or(f64::NAN)
            )?;
            if !test.is_empty() {
                let held = EvalInputs {
                    model: Some(model),
                    ..eval
                };
                match evaluate_corpus(&test, &[Metric::VcrScore], &held) {
                    Ok(r) => match r.correlation(Metric::VcrScore.name()) {
                        Some(rho) => {
                            writeln!(out, "held-out spearman\t{rho:.4}\t(n = {})", test.len())?
                        }
                        None => writeln!(out, "held-out spearman\tn/a")?,
                    },
                    Err(e) => writeln!(out, "held-out spearman\tn/a ({e})")?,
                }
            }
            writeln!(out, "wrote\t{}", out_model.display())?;
        }
        Command::Evaluate {
            model_file,
            report_dir,
            metrics,
            partition,
            train_fraction,
            bins,
            inputs,
        } => {
            let corpus = ctx.corpus()?;
            let mut eval = ctx.eval_inputs(&inputs)?;
            if let Some(p) = model_file.as_ref().or(ctx.file.model_file.as_ref()) {
                eval.model = Some(VcrModel::load(p)?);
            }
            let part = match partition {
                Partition::All => corpus,
                Partition::Train => split(&corpus, &ctx.split_spec(train_fraction))?.0,
                Partition::Test => split(&corpus, &ctx.split_spec(train_fraction))?.1,
            };
            let metrics = metric_list(metrics.as_deref().or(ctx.file.metrics.as_deref()), &eval)?;
            let report = evaluate_corpus(&part, &metrics, &eval)?;
            emit_report(&report, &report_dir, bins)?;
            writeln!(out, "samples\t{}", part.len())?;
            write!(out, "{}", correlation_table(&[("spearman", &report)]))?;
            for warning in &report.warnings {
                writeln!(out, "warning: {warning}")?;
            }
            writeln!(out, "report\t{}", report_dir.display())?;
        }
        Command::Agree { level, tau, json } => {
            let corpus = ctx.corpus()?;
            let tables = tagging_agreement(&corpus, level, tau);
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&tables)?)?;
            } else {
                writeln!(out, "tagger\talpha\ttau\tpaired")?;
                for t in &tables.taggers {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}",
                        t.tagger,
                        fmt_cell(&t.alpha),
                        fmt_cell(&t.tau),
                        t.paired
                    )?;
                }
                writeln!(out)?;
                writeln!(out, "combination\talpha")?;
                for g in &tables.groups {
                    writeln!(out, "{}\t{}", g.label, fmt_cell(&g.alpha))?;
                }
            }
        }
        Command::Rank { view, models, json } => {
            let corpus = ctx.corpus()?;
            let declared = (!models.is_empty()).then_some(models.as_slice());
            let views: Vec<ViewKind> = view.map_or(ViewKind::ALL.to_vec(), |v| vec![v]);
            let mut all = Vec::new();
            for v in views {
                all.push(rank_models(&corpus, v, ctx.seed, declared)?);
            }
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&all)?)?;
            } else {
                for v in &all {
                    writeln!(out, "{} ({} images)", v.kind.name(), v.n_images)?;
                    for (pos, m) in v.ranking.iter().enumerate() {
                        let t = v
                            .totals
                            .iter()
                            .find(|t| &t.model_id == m)
                            .expect("ranked model has a total");
                        writeln!(out, "{}\t{}\t{:.4}\t{:.2}", pos + 1, m, t.total, t.display)?;
                    }
                    for tie in &v.ties {
                        writeln!(out, "tied\t{}", tie.join(","))?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Command::Serve {
            bind,
            data_dir,
            taggers,
            open_phases,
        } => {
            let corpus = ctx.corpus()?;
            let s = &ctx.file.serve;
            let defaults = ServiceConfig::default();
            let config = ServiceConfig {
                data_dir: data_dir
                    .or_else(|| s.data_dir.clone())
                    .unwrap_or(defaults.data_dir),
                seed: ctx.seed,
                taggers: if taggers.is_empty() {
                    s.taggers.clone().unwrap_or_default()
                } else {
                    taggers
                },
                open_phases: if open_phases.is_empty() {
                    s.open_phases.clone().unwrap_or(defaults.open_phases)
                } else {
                    open_phases
                },
                image_locator: s.image_locator.clone().unwrap_or(defaults.image_locator),
                snapshot_every: s.snapshot_every.unwrap_or(defaults.snapshot_every),
                level: s.level.unwrap_or(defaults.level),
                tau: s.tau.unwrap_or(defaults.tau),
            };
            let bind = bind
                .or_else(|| s.bind.clone())
                .unwrap_or_else(|| "127.0.0.1:8080".into());
            let service = Arc::new(AnnotationService::open(corpus, config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                vcr_annotate::http::serve(listener, service).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}
