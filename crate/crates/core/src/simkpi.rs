//! Transmission KPIs for classical, vanilla-semantic and contrastive routing.
//!
//! Every scheme is one routing of the same trained model:
//!
//! * classical sends every raw record;
//! * vanilla-semantic puts every point in the language (threshold 0);
//! * contrastive sends learnable points semantically and memorizable points
//!   classically.
//!
//! A learnable cluster's representation "regenerates" each member whose
//! embedding has cosine at least [`RECONSTRUCTION_COSINE`] with the
//! dequantized cluster centroid; each regenerated record counts as its
//! packets. Semantic impact is regenerated packets per second of
//! representation airtime, averaged over the semantic representations.
//! Schemes with no semantic part report the classical figures.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::TrainConfig;
use crate::datagen::{content_complexity, mixture_for_complexity, synth_mixture, Datastream, MixtureConfig};
use crate::disentangle::{rank_and_split, AssignmentMatrix, SplitReport, Threshold};
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::numcore::{cosine, Rng};
use crate::pipeline::run_pipeline;
use crate::report::format_float;
use crate::semlang::{build_language_from_embeddings, dequantize, quantize, SemanticLanguage};

pub const RECONSTRUCTION_COSINE: f64 = 0.95;

/// Evenly spaced sweep grid in nats.
pub const DEFAULT_COMPLEXITIES: [f64; 4] = [0.4, 0.8, 1.2, 1.6];

/// Representations shorter than this are billed as this many bits of airtime.
pub const MIN_AIRTIME_BITS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub rate_bits_per_s: f64,
    pub packet_bits: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            rate_bits_per_s: 1e6,
            packet_bits: 1024,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_bits_per_s > 0.0) || !self.rate_bits_per_s.is_finite() {
            return Err(Error::domain("rate_bits_per_s must be finite and > 0"));
        }
        if self.packet_bits == 0 {
            return Err(Error::domain("packet_bits must be positive"));
        }
        Ok(())
    }

    pub fn packets_per_record(&self, record_bits: u64) -> u64 {
        record_bits.div_ceil(self.packet_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Classical,
    Vanilla,
    Contrastive,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Classical, Scheme::Vanilla, Scheme::Contrastive];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Classical => "classical",
            Scheme::Vanilla => "vanilla",
            Scheme::Contrastive => "contrastive",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Scheme::Classical),
            "vanilla" => Ok(Scheme::Vanilla),
            "contrastive" => Ok(Scheme::Contrastive),
            other => Err(Error::domain(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub scheme: Scheme,
    pub complexity_nats: f64,
    pub avg_repr_len_bits: f64,
    pub semantic_impact: f64,
    pub total_tx_time_s: f64,
}

impl KpiRecord {
    /// Same numbers, ignoring the scheme tag.
    pub fn same_figures(&self, other: &KpiRecord) -> bool {
        self.complexity_nats == other.complexity_nats
            && self.avg_repr_len_bits == other.avg_repr_len_bits
            && self.semantic_impact == other.semantic_impact
            && self.total_tx_time_s == other.total_tx_time_s
    }
}

/// Raw transmission of every record: `(bits, seconds)`.
pub fn classical_cost(data: &Datastream, ch: &ChannelConfig) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::domain("classical cost of an empty stream"));
    }
    let bits = data.len() as f64 * data.record_bits as f64;
    Ok((bits, bits / ch.rate_bits_per_s))
}

/// `packets / (repr_bits / rate)`.
pub fn semantic_impact(regenerable_packets: u64, repr_bits: f64, ch: &ChannelConfig) -> Result<f64> {
    if !(repr_bits > 0.0) {
        return Err(Error::domain(format!(
            "representation length must be > 0, got {repr_bits}"
        )));
    }
    Ok(regenerable_packets as f64 / (repr_bits / ch.rate_bits_per_s))
}

fn classical_record(data: &Datastream, ch: &ChannelConfig, complexity: f64) -> Result<KpiRecord> {
    let (_, seconds) = classical_cost(data, ch)?;
    let impact = semantic_impact(ch.packets_per_record(data.record_bits), data.record_bits as f64, ch)?;
    Ok(KpiRecord {
        scheme: Scheme::Classical,
        complexity_nats: complexity,
        avg_repr_len_bits: data.record_bits as f64,
        semantic_impact: impact,
        total_tx_time_s: seconds,
    })
}

/// Regenerated packets per codebook cluster, in cluster order.
pub fn regenerable_packets(
    lang: &SemanticLanguage,
    embeddings: &[Embedding],
    packets_per_record: u64,
) -> Result<Vec<(usize, u64)>> {
    let q = lang.bits_per_dim;
    lang.codebook
        .iter()
        .map(|(&label, centroid)| {
            let recon = dequantize(&quantize(centroid.as_slice(), q)?, q)?;
            let mut passing = 0u64;
            for (&i, entry) in &lang.entries {
                if entry.label == label && cosine(&recon, embeddings[i].as_slice())? >= RECONSTRUCTION_COSINE {
                    passing += 1;
                }
            }
            Ok((label, passing * packets_per_record))
        })
        .collect()
}

/// Everything needed to evaluate any scheme on one trained stream.
#[derive(Debug, Clone, Copy)]
pub struct SchemeInputs<'a> {
    pub data: &'a Datastream,
    pub embeddings: &'a [Embedding],
    pub assignments: &'a AssignmentMatrix,
    /// The contrastive split; the vanilla scheme derives its own.
    pub split: &'a SplitReport,
    pub bits_per_dim: u32,
    pub channel: &'a ChannelConfig,
    pub complexity_nats: f64,
}

/// KPIs for learnable points routed through the language and the rest sent
/// classically.
pub fn evaluate_routing(inputs: &SchemeInputs<'_>, split: &SplitReport, scheme: Scheme) -> Result<KpiRecord> {
    let SchemeInputs {
        data,
        embeddings,
        assignments,
        channel: ch,
        ..
    } = *inputs;
    let lang = build_language_from_embeddings(embeddings, split, assignments, inputs.bits_per_dim)?;
    let Some(avg_bits) = lang.avg_length_bits()? else {
        return Ok(KpiRecord {
            scheme,
            ..classical_record(data, ch, inputs.complexity_nats)?
        });
    };
    let airtime_bits = avg_bits.max(MIN_AIRTIME_BITS);
    let per_cluster = regenerable_packets(&lang, embeddings, ch.packets_per_record(data.record_bits))?;
    let impacts = per_cluster
        .iter()
        .map(|&(_, packets)| semantic_impact(packets, airtime_bits, ch))
        .collect::<Result<Vec<f64>>>()?;
    let impact = impacts.iter().sum::<f64>() / impacts.len() as f64;

    let semantic_bits = airtime_bits * lang.len() as f64;
    let classical_bits = split.memorizable_ids.len() as f64 * data.record_bits as f64;
    Ok(KpiRecord {
        scheme,
        complexity_nats: inputs.complexity_nats,
        avg_repr_len_bits: avg_bits,
        semantic_impact: impact,
        total_tx_time_s: (semantic_bits + classical_bits) / ch.rate_bits_per_s,
    })
}

pub fn evaluate_scheme(scheme: Scheme, inputs: &SchemeInputs<'_>) -> Result<KpiRecord> {
    match scheme {
        Scheme::Classical => classical_record(inputs.data, inputs.channel, inputs.complexity_nats),
        Scheme::Vanilla => {
            let all = rank_and_split(&inputs.split.confidences, &inputs.assignments.hard_labels, 0.0)?;
            evaluate_routing(inputs, &all, Scheme::Vanilla)
        }
        Scheme::Contrastive => evaluate_routing(inputs, inputs.split, Scheme::Contrastive),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Template for each sweep point; content count and noise fraction are
    /// replaced per complexity.
    pub mixture: MixtureConfig,
    pub train: TrainConfig,
    /// Clusters beyond the content count at each sweep point.
    pub extra_clusters: usize,
    /// Defaults to the largest-gap rule: a fixed cutoff tuned for one mixture
    /// does not carry across content counts.
    pub threshold: Threshold,
    pub bits_per_dim: u32,
    pub channel: ChannelConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureConfig::default(),
            train: TrainConfig::default(),
            extra_clusters: 2,
            threshold: Threshold::Auto,
            bits_per_dim: 4,
            channel: ChannelConfig::default(),
            seed: 7,
        }
    }
}

/// Runs the full pipeline at each complexity and evaluates each scheme.
/// Sweep points run in parallel with seeds derived from `cfg.seed` and the
/// point index; rows come back in input order, schemes in the given order.
pub fn run_sweep(complexities: &[f64], schemes: &[Scheme], cfg: &SweepConfig) -> Result<Vec<KpiRecord>> {
    if complexities.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("sweep complexities must be strictly increasing"));
    }
    cfg.channel.validate()?;
    let root = Rng::new(cfg.seed);
    let rows: Vec<Result<Vec<KpiRecord>>> = complexities
        .par_iter()
        .enumerate()
        .map(|(idx, &nats)| {
            sweep_point(nats, idx, schemes, cfg, &root).map_err(|e| Error::SweepPoint {
                index: idx,
                complexity: nats,
                source: Box::new(e),
            })
        })
        .collect();
    let mut table = Vec::with_capacity(complexities.len() * schemes.len());
    for r in rows {
        table.extend(r?);
    }
    Ok(table)
}

fn sweep_point(nats: f64, idx: usize, schemes: &[Scheme], cfg: &SweepConfig, root: &Rng) -> Result<Vec<KpiRecord>> {
    let point_rng = root.child(idx as u64);
    let mixture = MixtureConfig {
        seed: point_rng.child(0).seed(),
        ..mixture_for_complexity(nats, &cfg.mixture)?
    };
    let data = synth_mixture(&mixture)?;
    let complexity = content_complexity(&mixture);

    if schemes.iter().all(|&s| s == Scheme::Classical) {
        return schemes
            .iter()
            .map(|_| classical_record(&data, &cfg.channel, complexity))
            .collect();
    }
    let train_cfg = TrainConfig {
        clusters: mixture.n_contents + cfg.extra_clusters,
        seed: point_rng.child(1).seed(),
        ..cfg.train.clone()
    };
    let out = run_pipeline(&data, &train_cfg, cfg.threshold)?;
    let inputs = SchemeInputs {
        data: &data,
        embeddings: &out.embeddings,
        assignments: &out.assignments,
        split: &out.split,
        bits_per_dim: cfg.bits_per_dim,
        channel: &cfg.channel,
        complexity_nats: complexity,
    };
    schemes.iter().map(|&s| evaluate_scheme(s, &inputs)).collect()
}

pub const KPI_CSV_HEADER: &str = "scheme,complexity_nats,avg_repr_len_bits,semantic_impact,total_tx_time_s";

pub fn write_kpi_csv<W: Write>(out: &mut W, records: &[KpiRecord]) -> std::io::Result<()> {
    writeln!(out, "{KPI_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.scheme.tag(),
            format_float(r.complexity_nats),
            format_float(r.avg_repr_len_bits),
            format_float(r.semantic_impact),
            format_float(r.total_tx_time_s)
        )?;
    }
    Ok(())
}
