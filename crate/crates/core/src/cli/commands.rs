//! The four subcommands. Each returns the files it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::contrastive::{train, write_metrics_csv, MemoryBank};
use crate::datagen::Datastream;
use crate::disentangle::{assign_all, split_assignments, AssignmentMatrix, SplitReport};
use crate::encoder::{read_checkpoint, write_checkpoint, EncoderParams, EncoderState};
use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::semlang::{build_language, language_complexity, SemanticLanguage};
use crate::simkpi::{run_sweep, write_kpi_csv, Scheme};

pub const ENCODER_FILE: &str = "encoder.bin";
pub const MOMENTUM_FILE: &str = "momentum.bin";
pub const BANK_FILE: &str = "bank.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const SPLIT_JSON: &str = "split.json";
pub const LANGUAGE_JSON: &str = "language.json";
pub const KPI_CSV: &str = "kpi.csv";
pub const KPI_JSON: &str = "kpi.json";

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Trains and writes both encoders, the bank and per-epoch metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = cfg.load_data()?;
    let model = train(&data, &cfg.train_config())?;
    let out = out_dir(cfg)?;

    let encoder = out.join(ENCODER_FILE);
    write_checkpoint(&encoder, &model.state.online)?;
    let momentum = out.join(MOMENTUM_FILE);
    write_checkpoint(&momentum, &model.state.momentum)?;

    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &model.metrics).expect("writing to memory");
    Ok(vec![
        encoder,
        momentum,
        write_file(out.join(BANK_FILE), &json(&model.bank)?)?,
        write_file(out.join(METRICS_CSV), &csv)?,
        write_file(out.join(METRICS_JSON), &json(&model.metrics)?)?,
    ])
}

/// A trained encoder and bank read back from a `train` output directory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub bank: MemoryBank,
}

fn checkpoint_err(message: String) -> Error {
    Error::Config {
        key: "--checkpoint".into(),
        message,
    }
}

impl Checkpoint {
    pub fn load(dir: &Path) -> Result<Self> {
        let encoder = read_checkpoint(&dir.join(ENCODER_FILE))?;
        let bank_path = dir.join(BANK_FILE);
        let text = std::fs::read_to_string(&bank_path).map_err(|e| Error::io(&bank_path, e))?;
        let bank: MemoryBank = serde_json::from_str(&text)?;
        bank.validate()?;
        Ok(Self { encoder, bank })
    }

    /// Dimensions must match the configuration and the data.
    pub fn check_compatible(&self, cfg: &RunConfig, data: &Datastream) -> Result<()> {
        let e = &self.encoder;
        let expected = (data.dim(), cfg.train.hidden_dim, cfg.train.embed_dim);
        let found = (e.input_dim(), e.hidden_dim(), e.output_dim());
        if found != expected {
            return Err(checkpoint_err(format!(
                "encoder dims (D, H, N) = {found:?} but the configuration needs {expected:?}"
            )));
        }
        if self.bank.num_clusters() != cfg.train.clusters {
            return Err(checkpoint_err(format!(
                "bank has {} clusters but train.clusters = {}",
                self.bank.num_clusters(),
                cfg.train.clusters
            )));
        }
        if self.bank.embed_dim().is_some_and(|n| n != e.output_dim()) {
            return Err(checkpoint_err("bank embeddings do not match the encoder output".into()));
        }
        Ok(())
    }
}

fn assign_and_split(
    cfg: &RunConfig,
    checkpoint_dir: &Path,
) -> Result<(Datastream, Checkpoint, AssignmentMatrix, SplitReport)> {
    let data = cfg.load_data()?;
    let ckpt = Checkpoint::load(checkpoint_dir)?;
    ckpt.check_compatible(cfg, &data)?;
    let assignments = assign_all(&data, &ckpt.encoder, &ckpt.bank, cfg.train.tau)?;
    let split = split_assignments(&assignments, cfg.split.threshold)?;
    Ok((data, ckpt, assignments, split))
}

pub fn cmd_split(cfg: &RunConfig, checkpoint_dir: &Path) -> Result<Vec<PathBuf>> {
    let (_, _, _, split) = assign_and_split(cfg, checkpoint_dir)?;
    let out = out_dir(cfg)?;
    Ok(vec![write_file(out.join(SPLIT_JSON), &json(&split)?)?])
}

#[derive(Debug, Serialize)]
struct LanguageReport<'a> {
    avg_length_bits: Option<f64>,
    complexity: f64,
    threshold: f64,
    language: &'a SemanticLanguage,
}

/// Language over the learnable points, with its average representation
/// length and complexity measured against the seeded initialization.
pub fn cmd_build_lang(cfg: &RunConfig, checkpoint_dir: &Path) -> Result<Vec<PathBuf>> {
    let (data, ckpt, assignments, split) = assign_and_split(cfg, checkpoint_dir)?;
    let lang = build_language(&data, &split, &assignments, &ckpt.encoder, cfg.language.bits_per_dim)?;
    let t = cfg.train_config();
    let initial = EncoderState::init(data.dim(), t.hidden_dim, t.embed_dim, &mut Rng::new(t.seed).child(0)).online;
    let complexity = language_complexity(&lang, &assignments, &initial, &ckpt.encoder, &cfg.language.complexity())?;
    let report = LanguageReport {
        avg_length_bits: lang.avg_length_bits()?,
        complexity,
        threshold: split.threshold,
        language: &lang,
    };
    let out = out_dir(cfg)?;
    Ok(vec![write_file(out.join(LANGUAGE_JSON), &json(&report)?)?])
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.data.binary_path.is_some() {
        return Err(Error::Config {
            key: "data.binary_path".into(),
            message: "sweeps need the synthetic mixture".into(),
        });
    }
    let rows = run_sweep(&cfg.sweep.complexities, &Scheme::ALL, &cfg.sweep_config())?;
    let out = out_dir(cfg)?;
    let mut csv = Vec::new();
    write_kpi_csv(&mut csv, &rows).expect("writing to memory");
    Ok(vec![
        write_file(out.join(KPI_CSV), &csv)?,
        write_file(out.join(KPI_JSON), &json(&rows)?)?,
    ])
}
