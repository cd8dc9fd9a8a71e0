//! Settings shared by the subcommands, layered as built-in defaults, then an
//! optional TOML file, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spgs::train::{DistillConfig, PoseConfig, Profile, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillOptions {
    pub iters: usize,
    pub position_weight: f64,
    pub rotation_weight: f64,
    pub nonrigid: bool,
}

impl Default for DistillOptions {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self { iters: d.iters, position_weight: d.position_weight, rotation_weight: d.rotation_weight, nonrigid: d.nonrigid }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub pose: PoseConfig,
    pub distill: DistillOptions,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), pose: PoseConfig::default(), distill: DistillOptions::default() }
    }
}

impl CliConfig {
    /// Defaults with the given schedule profile applied.
    pub fn with_profile(profile: Profile) -> Self {
        Self { train: TrainConfig::default().with_profile(profile), ..Self::default() }
    }

    /// Overlay the keys present in `text` on `self`. Unknown keys and
    /// ill-typed values are errors.
    pub fn layer_toml(&self, text: &str) -> Result<Self> {
        let mut base = toml::Value::try_from(self)?;
        let overlay: toml::Value = text.parse().context("parsing config file")?;
        merge(&mut base, overlay);
        let merged: Self = base.try_into().context("invalid config file")?;
        merged.train.validate()?;
        Ok(merged)
    }

    pub fn layer_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.layer_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            iters: d.iters,
            position_weight: d.position_weight,
            rotation_weight: d.rotation_weight,
            nonrigid: d.nonrigid,
            train: self.train.clone(),
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
