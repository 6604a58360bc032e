use std::path::{Path, PathBuf};

use anyhow::Result;
use irevnet::io::DataSource;
use irevnet::training::{OptimConfig, TrainConfig};
use irevnet::NetConfig;
use serde::Deserialize;

use crate::usage;

/// Experiment file for `irevnet train`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub net: Option<toml::Table>,
    #[serde(default)]
    pub optimizer: OptimConfig,
    pub data: DataSection,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_source")]
    pub source: String,
    pub dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

fn default_source() -> String {
    "mnist".into()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.optimizer
            .validate()
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.source()?;
        Ok(cfg)
    }

    /// `[net]` is either `preset = "<name>"` or the full explicit layout;
    /// absent means `tiny-b`.
    pub fn net(&self) -> Result<NetConfig> {
        let Some(table) = &self.net else {
            return Ok(NetConfig::tiny_b());
        };
        if let Some(preset) = table.get("preset") {
            if table.len() > 1 {
                return Err(usage(
                    "[net]: `preset` cannot be combined with explicit fields",
                ));
            }
            let name = preset
                .as_str()
                .ok_or_else(|| usage("[net]: `preset` must be a string"))?;
            return preset_config(name);
        }
        let cfg: NetConfig = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e| usage(format!("[net]: {e}")))?;
        cfg.validate().map_err(|e| usage(format!("[net]: {e}")))?;
        Ok(cfg)
    }

    pub fn source(&self) -> Result<DataSource> {
        self.data
            .source
            .parse()
            .map_err(|e| usage(format!("[data] source: {e}")))
    }
}

pub fn preset_config(name: &str) -> Result<NetConfig> {
    NetConfig::preset(name).ok_or_else(|| {
        usage(format!(
            "unknown preset `{name}` (known: {})",
            NetConfig::PRESETS.join(", ")
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
                cfg.net().unwrap().validate().unwrap();
                cfg.source().unwrap();
                seen += 1;
            }
        }
        assert!(seen >= 2);
    }
}
