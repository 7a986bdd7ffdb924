//! Run and grid configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scirec::encoder::{EncoderConfig, EncoderKind};
use scirec::evaluator::SplitMode;
use scirec::model::MultiTaskConfig;
use scirec::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Published JSON schema of [`RunConfig`]; kept in sync by a unit test.
#[allow(dead_code)]
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run-config.schema.json");

pub const MAX_LENGTHS: [usize; 2] = [200, 400];

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preprocessed corpus archive.
    pub corpus: PathBuf,
    /// Split plan written by `scirec split`.
    pub split: PathBuf,
    #[serde(default)]
    pub fold: usize,
    pub max_length: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
    pub multitask: MultiTaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parses and checks a config document. The seed lives at the top level
    /// only, so `train.seed` is rejected rather than silently overridden.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        if value.pointer("/train/seed").is_some() {
            bail!("invalid configuration: set the seed at the top level, not in train.seed");
        }
        let mut config: RunConfig = serde_json::from_value(value).context("config does not match the schema")?;
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if !MAX_LENGTHS.contains(&self.max_length) {
            bail!("invalid configuration: max_length must be one of {MAX_LENGTHS:?}, got {}", self.max_length);
        }
        self.encoder.validate()?;
        self.multitask.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// The effective configuration as canonical JSON.
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        // the copy inside `train` is derived from the top-level seed
        if let Some(train) = v.get_mut("train").and_then(Value::as_object_mut) {
            train.remove("seed");
        }
        v
    }
}

/// One corpus archive per document length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDataset {
    pub name: String,
    pub corpus_200: Option<PathBuf>,
    pub corpus_400: Option<PathBuf>,
}

impl GridDataset {
    pub fn corpus(&self, max_length: usize) -> Option<&Path> {
        match max_length {
            200 => self.corpus_200.as_deref(),
            400 => self.corpus_400.as_deref(),
            _ => None,
        }
    }
}

/// The encoder × length × mode comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub datasets: Vec<GridDataset>,
    #[serde(default = "all_kinds")]
    pub encoders: Vec<EncoderKind>,
    #[serde(default = "all_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "all_modes")]
    pub modes: Vec<SplitMode>,
    /// Folds trained and averaged per cell.
    #[serde(default = "first_fold")]
    pub folds: Vec<usize>,
    /// Layer widths and rates shared by every cell; `kind` is overridden.
    #[serde(default)]
    pub encoder: EncoderConfig,
    pub multitask: MultiTaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn all_kinds() -> Vec<EncoderKind> {
    EncoderKind::ALL.to_vec()
}

fn all_lengths() -> Vec<usize> {
    MAX_LENGTHS.to_vec()
}

fn all_modes() -> Vec<SplitMode> {
    vec![SplitMode::Warm, SplitMode::Cold]
}

fn first_fold() -> Vec<usize> {
    vec![0]
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).context("grid config is not valid JSON")?;
        if value.pointer("/train/seed").is_some() {
            bail!("invalid configuration: set the seed at the top level, not in train.seed");
        }
        let mut config: GridConfig = serde_json::from_value(value).context("grid config does not match the schema")?;
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.encoders.is_empty() || self.lengths.is_empty() || self.modes.is_empty() {
            bail!("invalid configuration: datasets, encoders, lengths and modes must be nonempty");
        }
        if self.folds.is_empty() || self.folds.iter().any(|&f| f >= scirec::evaluator::N_FOLDS) {
            bail!("invalid configuration: folds must be a nonempty subset of 0..{}", scirec::evaluator::N_FOLDS);
        }
        if let Some(&bad) = self.lengths.iter().find(|l| !MAX_LENGTHS.contains(l)) {
            bail!("invalid configuration: length {bad} is not one of {MAX_LENGTHS:?}");
        }
        self.multitask.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "corpus": "c", "split": "s.json", "max_length": 200,
        "multitask": {"lambda": 0.3}, "output_dir": "out", "seed": 4
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.encoder, EncoderConfig::default());
        assert_eq!(c.train.seed, 4);
        assert_eq!(c.multitask.lambda, 0.3);
    }

    #[test]
    fn lambda_is_mandatory() {
        let text = MINIMAL.replace(r#""multitask": {"lambda": 0.3}"#, r#""multitask": {}"#);
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn unknown_keys_and_nested_seed_are_rejected() {
        assert!(RunConfig::from_json(&MINIMAL.replace("\"seed\"", "\"sead\"")).is_err());
        let nested = MINIMAL.replace(r#""seed": 4"#, r#""seed": 4, "train": {"seed": 1}"#);
        assert!(RunConfig::from_json(&nested).is_err());
        let typo = MINIMAL.replace(r#""seed": 4"#, r#""seed": 4, "encoder": {"embed_dims": 3}"#);
        assert!(RunConfig::from_json(&typo).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.multitask.lambda = 1.5;
        assert!(c.validate().is_err());
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.max_length = 300;
        assert!(c.validate().is_err());
    }

    /// Property names of a schema object node.
    fn schema_keys(node: &Value) -> Vec<String> {
        let mut keys: Vec<String> = node["properties"].as_object().unwrap().keys().cloned().collect();
        keys.sort();
        keys
    }

    fn object_keys(v: &Value) -> Vec<String> {
        let mut keys: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        keys
    }

    #[test]
    fn schema_matches_the_config_types() {
        let schema: Value = serde_json::from_str(RUN_CONFIG_SCHEMA).unwrap();
        let v = RunConfig::from_json(MINIMAL).unwrap().to_value();
        assert_eq!(schema_keys(&schema), object_keys(&v));
        for section in ["encoder", "multitask", "train"] {
            assert_eq!(schema_keys(&schema["properties"][section]), object_keys(&v[section]), "{section}");
        }
        assert_eq!(
            schema_keys(&schema["properties"]["train"]["properties"]["optimizer"]),
            object_keys(&v["train"]["optimizer"])
        );
    }
}
