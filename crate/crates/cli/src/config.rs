use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mvre::data::{CorpusSpec, SplitFractions};
use mvre::experiments::TrainConfig;
use mvre::nn::{ModelConfig, PretrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything a command may read. The top-level `seed` replaces the
/// per-section seeds of single-run commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub data: DataConfig,
    pub paths: Paths,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    /// Append the filled template suffix to pretraining sentences.
    pub pretrain_with_suffix: bool,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            corpus: CorpusSpec::default(),
            data: DataConfig::default(),
            paths: Paths::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            pretrain_with_suffix: true,
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub na_label: Option<String>,
    pub split: SplitFractions,
    /// Fixed apart from `seed` so that episodes vary over one split.
    pub split_seed: u64,
    /// Shots per relation for `train`, `sweep-m`.
    pub k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            na_label: None,
            split: SplitFractions::default(),
            split_seed: 1,
            k: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub base_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub m_values: Vec<usize>,
    pub sim_k: usize,
    pub sim_m: usize,
    pub top_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1, 2, 3, 4, 5],
            m_values: (1..=5).collect(),
            sim_k: 4,
            sim_m: 4,
            top_k: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        // The vocabulary size is only known once a dataset is loaded.
        ModelConfig {
            vocab_size: self.model.vocab_size.max(1),
            ..self.model.clone()
        }
        .validate()?;
        self.train.validate()?;
        if self.data.k == 0 {
            bail!("invalid `data.k`: must be at least 1");
        }
        if self.experiment.seeds.is_empty() {
            bail!("invalid `experiment.seeds`: empty");
        }
        if self.experiment.m_values.contains(&0) || self.experiment.m_values.is_empty() {
            bail!("invalid `experiment.m_values`: need at least one value, all >= 1");
        }
        if self.experiment.top_k == 0 {
            bail!("invalid `experiment.top_k`: must be at least 1");
        }
        Ok(())
    }
}

/// Splits `a.b.c=value`. The value is read as JSON when it parses, else as a
/// bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{s}` is not key=value"))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override key `{key}` has an empty segment");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("`{}` is not a section", path[..i].join(".")))?;
        node = obj
            .get_mut(seg)
            .ok_or_else(|| anyhow!("unknown config key `{}`", path[..=i].join(".")))?;
    }
    *node = value;
    Ok(())
}

/// Overlays `patch` on `base`, refusing keys `base` does not have.
fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if at.is_empty() {
                    k.clone()
                } else {
                    format!("{at}.{k}")
                };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| anyhow!("unknown config key `{here}`"))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = file {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if !patch.is_object() {
            bail!("{}: top level must be an object", path.display());
        }
        merge(&mut value, patch, "")?;
    }
    for o in overrides {
        let (path, v) = parse_override(o)?;
        set_path(&mut value, &path, v)?;
    }
    if let Some(seed) = seed {
        value["seed"] = seed.into();
    }
    let config: RunConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}
