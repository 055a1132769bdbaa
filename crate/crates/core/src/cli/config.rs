//! Run configuration: one TOML file, overridden key by key from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::TrainConfig;
use crate::datagen::{ingest_binary, synth_mixture, Datastream, MixtureConfig};
use crate::disentangle::Threshold;
use crate::error::{Error, Result};
use crate::semlang::ComplexityConfig;
use crate::simkpi::{ChannelConfig, SweepConfig, DEFAULT_COMPLEXITIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds data generation, initialization and training.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub language: LanguageConfig,
    pub channel: ChannelConfig,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            language: LanguageConfig::default(),
            channel: ChannelConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Synthetic mixture by default; setting `binary_path` reads fixed-size
/// records from a file instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_contents: usize,
    pub dim: usize,
    pub points: usize,
    pub noise_fraction: f64,
    pub separation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary_path: Option<PathBuf>,
    pub record_bytes: usize,
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let m = MixtureConfig::default();
        Self {
            n_contents: m.n_contents,
            dim: m.dim,
            points: m.points,
            noise_fraction: m.noise_fraction,
            separation: m.separation,
            binary_path: None,
            record_bytes: 256,
            normalize: true,
        }
    }
}

impl DataConfig {
    pub fn mixture(&self, seed: u64) -> MixtureConfig {
        MixtureConfig {
            n_contents: self.n_contents,
            dim: self.dim,
            points: self.points,
            noise_fraction: self.noise_fraction,
            separation: self.separation,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub threshold: Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanguageConfig {
    pub bits_per_dim: u32,
    pub beta: f64,
    pub prior_sigma: f64,
    pub posterior_sigma: f64,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        let c = ComplexityConfig::default();
        Self {
            bits_per_dim: 4,
            beta: c.beta,
            prior_sigma: c.prior_sigma,
            posterior_sigma: c.posterior_sigma,
        }
    }
}

impl LanguageConfig {
    pub fn complexity(&self) -> ComplexityConfig {
        ComplexityConfig {
            beta: self.beta,
            prior_sigma: self.prior_sigma,
            posterior_sigma: self.posterior_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub complexities: Vec<f64>,
    /// Clusters beyond the content count at each point.
    pub extra_clusters: usize,
    pub threshold: Threshold,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            complexities: DEFAULT_COMPLEXITIES.to_vec(),
            extra_clusters: 2,
            threshold: Threshold::Auto,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Sets a dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "empty key segment"));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(config_err(key, format!("`{p}` is not a section"))),
        };
    }
    cur.insert(last.to_string(), parse_value(value));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| config_err(s, "override must look like key=value"))
}

impl RunConfig {
    /// File contents (if any) with `overrides` applied in order, then
    /// validated.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err("--config", format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| config_err("--config", e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().to_string();
            let message = message.lines().next().unwrap_or_default().to_string();
            config_err(if path == "." { "<root>" } else { &path }, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            mixture: self.data.mixture(self.seed),
            train: self.train_config(),
            extra_clusters: self.sweep.extra_clusters,
            threshold: self.sweep.threshold,
            bits_per_dim: self.language.bits_per_dim,
            channel: self.channel,
            seed: self.seed,
        }
    }

    pub fn load_data(&self) -> Result<Datastream> {
        match &self.data.binary_path {
            Some(p) => ingest_binary(p, self.data.record_bytes, self.data.normalize),
            None => synth_mixture(&self.data.mixture(self.seed)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &'static str| move |e: Error| config_err(section, e.to_string());
        if self.data.binary_path.is_none() {
            let m = self.data.mixture(self.seed);
            m.validate().map_err(wrap("data"))?;
            crate::datagen::mixture_centers(&m, &mut crate::numcore::Rng::new(self.seed)).map_err(wrap("data"))?;
        } else if self.data.record_bytes == 0 {
            return Err(config_err("data.record_bytes", "must be positive"));
        }
        self.train.validate().map_err(wrap("train"))?;
        if !(self.train.lr > 0.0) {
            return Err(config_err("train.lr", "must be > 0"));
        }
        if let Threshold::Fixed(t) = self.split.threshold {
            if t > 1.0 {
                return Err(config_err("split.threshold", "must lie in [0, 1]"));
            }
        }
        if !(1..=16).contains(&self.language.bits_per_dim) {
            return Err(config_err("language.bits_per_dim", "must lie in 1..=16"));
        }
        self.language.complexity().validate().map_err(wrap("language"))?;
        self.channel.validate().map_err(wrap("channel"))?;
        let c = &self.sweep.complexities;
        if c.is_empty() {
            return Err(config_err("sweep.complexities", "must not be empty"));
        }
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(config_err("sweep.complexities", "values must be finite and >= 0"));
        }
        if c.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config_err("sweep.complexities", "must be strictly increasing"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
