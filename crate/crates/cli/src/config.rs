//! TOML configuration file. Every key has a command-line flag, and every flag
//! reads `VCREVAL_<FLAG>` from the environment; precedence is flag, then
//! environment, then file, then built-in default.
//!
//! ```toml
//! corpus = "data/own.jsonl"
//! seed = 7
//! human = "mean"
//! train_fraction = 0.4
//! detections = "data/detections.jsonl"
//!
//! [embeddings]
//! mcip = "data/mcip.jsonl"
//! "clip.image" = "data/clip_image.emb"
//!
//! [channels]
//! vilt = "data/vilt.jsonl"
//!
//! [features]
//! clip_feature = "mcip-ref"
//!
//! [gbr]
//! n_estimators = 500
//!
//! [serve]
//! bind = "127.0.0.1:8080"
//! data_dir = "annotation"
//! taggers = ["tagger1", "tagger2"]
//! ```
//!
//! Relative paths are resolved against the directory of the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use vcr_core::agreement::{Level, TauVariant};
use vcr_core::corpus::Aggregation;
use vcr_core::gbr::TrainConfig;
use vcr_core::vcrscore::FeatureConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub seed: Option<u64>,
    pub human: Option<Aggregation>,
    pub train_fraction: Option<f64>,
    pub detections: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub metrics: Option<String>,
    /// `family` or `family.kind` to path.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub channels: BTreeMap<String, PathBuf>,
    pub features: FeatureConfig,
    pub gbr: TrainConfig,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub taggers: Option<Vec<String>>,
    pub open_phases: Option<Vec<u32>>,
    pub image_locator: Option<String>,
    pub snapshot_every: Option<usize>,
    pub level: Option<Level>,
    pub tau: Option<TauVariant>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.detections,
            &mut self.model_file,
            &mut self.serve.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.embeddings.values_mut().for_each(fix);
        self.channels.values_mut().for_each(fix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vcreval.toml");
        fs::write(
            &path,
            r#"
corpus = "own.jsonl"
seed = 3
human = "vote"

[embeddings]
mcip = "/abs/mcip.jsonl"
"clip.image" = "clip.emb"

[channels]
vilt = "vilt.jsonl"

[features]
clip_feature = "clip-ref"

[gbr]
n_estimators = 50

[serve]
taggers = ["a", "b"]
tau = "a"
"#,
        )
        .unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("own.jsonl"));
        assert_eq!(cfg.embeddings["mcip"], PathBuf::from("/abs/mcip.jsonl"));
        assert_eq!(cfg.embeddings["clip.image"], dir.path().join("clip.emb"));
        assert_eq!(cfg.human, Some(Aggregation::Vote));
        assert_eq!(cfg.gbr.n_estimators, 50);
        assert_eq!(cfg.gbr.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!(
            cfg.features.clip_feature,
            vcr_core::vcrscore::ClipFeature::ClipRef
        );
        assert_eq!(cfg.serve.tau, Some(TauVariant::A));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "corpsu = \"x\"\n").unwrap();
        assert!(FileConfig::load(&path).is_err());
    }
}
