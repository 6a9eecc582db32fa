//! Run configuration: defaults, then the dataset preset, then a JSON file,
//! then `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use kgqg_core::embed_init::NodeInit;
use kgqg_core::model::ModelConfig;
use kgqg_core::training::{Config, DatasetPreset, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Pretrained word vectors, GloVe text format.
    pub embeddings: Option<PathBuf>,
    /// Required when `model.node_init` is `kg-table`.
    pub kg_table: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn core(&self) -> Config {
        Config {
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.core().validate()?;
        if self.model.node_init == NodeInit::KgTable && self.paths.kg_table.is_none() {
            bail!("model.node_init = kg-table requires paths.kg_table");
        }
        Ok(())
    }
}

/// Where the layers of a configuration come from.
#[derive(Debug, Clone, Default)]
pub struct Sources<'a> {
    pub dataset: Option<DatasetPreset>,
    pub file: Option<&'a Path>,
    pub overrides: &'a [String],
}

impl Sources<'_> {
    /// Whether anything beyond the built-in defaults was given.
    pub fn is_explicit(&self) -> bool {
        self.dataset.is_some() || self.file.is_some() || !self.overrides.is_empty()
    }
}

pub fn load(sources: &Sources<'_>) -> Result<RunConfig> {
    let base = match sources.dataset {
        Some(d) => Config::preset(d),
        None => Config::default(),
    };
    let mut value = serde_json::to_value(RunConfig {
        model: base.model,
        train: base.train,
        paths: Paths::default(),
    })?;
    if let Some(path) = sources.file {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        merge(&mut value, file);
    }
    for o in sources.overrides {
        let (key, raw) = o
            .split_once('=')
            .with_context(|| format!("override {o:?} is not of the form key=value"))?;
        set_path(&mut value, key.trim(), parse_scalar(raw.trim()))?;
    }
    let config: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
    config.validate()?;
    Ok(config)
}

/// JSON when it parses, otherwise the raw string (so `variant=edge-aware`
/// needs no quotes).
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed override key {key:?}");
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .with_context(|| format!("override {key:?}: {p:?} is not a section"))?;
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur
        .as_object_mut()
        .with_context(|| format!("override {key:?} does not name a setting"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgqg_core::batch::GraphVariant;
    use kgqg_core::encoder::EncoderDirection;

    fn with(overrides: &[&str]) -> Result<RunConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        load(&Sources {
            overrides: &o,
            ..Default::default()
        })
    }

    #[test]
    fn precedence_cli_over_file_over_preset() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"train": {"gamma": 0.5, "lr": 0.01}, "model": {"hops": 2}}"#).unwrap();
        let o = vec!["train.lr=0.02".to_string()];
        let c = load(&Sources {
            dataset: Some(DatasetPreset::Pq),
            file: Some(&file),
            overrides: &o,
        })
        .unwrap();
        assert_eq!(c.train.lr, 0.02);
        assert_eq!(c.train.gamma, 0.5);
        assert_eq!(c.model.hops, 2);
        assert_eq!(c.model.markup_dim, 24);
        assert_eq!(c.train.rl_lr, 2e-5);
    }

    #[test]
    fn alias_names_are_accepted() {
        let c = with(&["model.variant=g2s-edge", "model.direction=fwd"]).unwrap();
        assert_eq!(c.model.variant, GraphVariant::EdgeAware);
        assert_eq!(c.model.direction, EncoderDirection::Forward);
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        assert!(with(&["model.node_init=kg-table"]).is_err());
        assert!(with(&["model.node_init=kg-table", "paths.kg_table=kg.tsv"]).is_ok());
        assert!(with(&["train.gamma=1.5"]).is_err());
        assert!(with(&["train.no_such_key=1"]).is_err());
        assert!(with(&["nonsense"]).is_err());
        assert!(with(&["model.hops.x=1"]).is_err());
    }
}
