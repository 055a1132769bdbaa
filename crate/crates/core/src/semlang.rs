//! The semantic language: a dictionary from learnable records to quantized
//! representations, plus length accounting and the language-complexity
//! metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::Datastream;
use crate::disentangle::{embed_all, AssignmentMatrix, SplitReport};
use crate::encoder::{Embedding, EncoderParams};
use crate::error::{Error, Result};

pub const MAX_BITS_PER_DIM: u32 = 16;

fn check_bits(q: u32) -> Result<()> {
    if (1..=MAX_BITS_PER_DIM).contains(&q) {
        Ok(())
    } else {
        Err(Error::domain(format!("bits per dimension must lie in 1..=16, got {q}")))
    }
}

/// Uniform scalar quantization of each coordinate of `[-1, 1]` into `2^q`
/// levels; values outside the range are clamped.
pub fn quantize(z: &[f64], q: u32) -> Result<Vec<u32>> {
    check_bits(q)?;
    let levels = 1u32 << q;
    Ok(z.iter()
        .map(|&c| {
            let pos = ((c + 1.0) * 0.5 * levels as f64).floor();
            pos.clamp(0.0, (levels - 1) as f64) as u32
        })
        .collect())
}

/// Midpoint reconstruction of [`quantize`]'s levels.
pub fn dequantize(code: &[u32], q: u32) -> Result<Vec<f64>> {
    check_bits(q)?;
    let width = 2.0 / (1u32 << q) as f64;
    Ok(code.iter().map(|&l| -1.0 + (l as f64 + 0.5) * width).collect())
}

/// Average bits per representation under a zeroth-order empirical entropy
/// code. Each coordinate position has its own symbol distribution, estimated
/// from the corpus being measured.
pub fn representation_length_bits<C: AsRef<[u32]>>(codes: &[C]) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::domain("representation length of an empty corpus"));
    }
    let dim = codes[0].as_ref().len();
    if codes.iter().any(|c| c.as_ref().len() != dim) {
        return Err(Error::Shape("codes in a corpus must share one length".into()));
    }
    let n = codes.len() as f64;
    let mut total = 0.0;
    for pos in 0..dim {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for c in codes {
            *counts.entry(c.as_ref()[pos]).or_default() += 1;
        }
        for &count in counts.values() {
            let count = count as f64;
            total -= count * (count / n).log2();
        }
    }
    Ok(total / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageEntry {
    /// Cluster pseudo-label.
    pub label: usize,
    pub code: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticLanguage {
    pub bits_per_dim: u32,
    /// Point id to entry.
    pub entries: BTreeMap<usize, LanguageEntry>,
    /// Cluster label to normalized mean member embedding.
    pub codebook: BTreeMap<usize, Embedding>,
}

impl SemanticLanguage {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn codes(&self) -> Vec<&[u32]> {
        self.entries.values().map(|e| e.code.as_slice()).collect()
    }

    /// Average entry length in bits, `None` for an empty language.
    pub fn avg_length_bits(&self) -> Result<Option<f64>> {
        if self.is_empty() {
            return Ok(None);
        }
        representation_length_bits(&self.codes()).map(Some)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Entries for the learnable points only, labeled by their hard assignment,
/// with one codebook centroid per learnable cluster that has members.
pub fn build_language(
    data: &Datastream,
    split: &SplitReport,
    assignments: &AssignmentMatrix,
    encoder: &EncoderParams,
    q: u32,
) -> Result<SemanticLanguage> {
    check_bits(q)?;
    if assignments.len() != data.len() || split.learnable_ids.len() + split.memorizable_ids.len() != data.len() {
        return Err(Error::Shape("split and assignments must cover the datastream".into()));
    }
    let embeddings = embed_all(data, encoder)?;
    build_language_from_embeddings(&embeddings, split, assignments, q)
}

pub(crate) fn build_language_from_embeddings(
    embeddings: &[Embedding],
    split: &SplitReport,
    assignments: &AssignmentMatrix,
    q: u32,
) -> Result<SemanticLanguage> {
    let mut entries = BTreeMap::new();
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &i in &split.learnable_ids {
        let label = assignments.hard_labels[i];
        let z = embeddings[i].as_slice();
        entries.insert(
            i,
            LanguageEntry {
                label,
                code: quantize(z, q)?,
            },
        );
        let acc = sums.entry(label).or_insert_with(|| vec![0.0; z.len()]);
        for (a, v) in acc.iter_mut().zip(z) {
            *a += v;
        }
    }
    let codebook = sums
        .into_iter()
        .map(|(l, s)| Embedding::normalize(s).map(|e| (l, e)))
        .collect::<Result<_>>()?;
    Ok(SemanticLanguage {
        bits_per_dim: q,
        entries,
        codebook,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    pub beta: f64,
    /// Width of the isotropic Gaussian pre-distribution.
    pub prior_sigma: f64,
    /// Width of the isotropic Gaussian post-distribution.
    pub posterior_sigma: f64,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            prior_sigma: 1.0,
            posterior_sigma: 0.1,
        }
    }
}

impl ComplexityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::domain("beta must be finite and >= 0"));
        }
        if !(self.prior_sigma > 0.0 && self.posterior_sigma > 0.0) {
            return Err(Error::domain("prior_sigma and posterior_sigma must be > 0"));
        }
        Ok(())
    }
}

/// `KL(N(post, σ_post² I) || N(pre, σ_pre² I))`.
pub fn gaussian_kl(post: &[f64], pre: &[f64], posterior_sigma: f64, prior_sigma: f64) -> Result<f64> {
    if post.len() != pre.len() {
        return Err(Error::Shape("KL between distributions of different dimension".into()));
    }
    let k = post.len() as f64;
    let sq: f64 = post.iter().zip(pre).map(|(a, b)| (a - b).powi(2)).sum();
    let var_ratio = (posterior_sigma / prior_sigma).powi(2);
    let kl = 0.5 * (k * var_ratio + sq / (prior_sigma * prior_sigma) - k - k * var_ratio.ln());
    // exact zero for identical distributions; rounding can otherwise leave ±ulp
    Ok(kl.max(0.0))
}

/// Cross-entropy of the language's pseudo-labels under the soft assignments
/// plus `β·KL(post || pre)` over the encoder parameters.
pub fn language_complexity(
    lang: &SemanticLanguage,
    assignments: &AssignmentMatrix,
    params_pre: &EncoderParams,
    params_post: &EncoderParams,
    cfg: &ComplexityConfig,
) -> Result<f64> {
    cfg.validate()?;
    if !params_pre.same_shape(params_post) {
        return Err(Error::Shape("pre and post parameters differ in shape".into()));
    }
    let mut cross_entropy = 0.0;
    for (&i, entry) in &lang.entries {
        let p = assignments
            .probabilities
            .get(i)
            .and_then(|row| row.get(entry.label))
            .copied()
            .ok_or_else(|| Error::Shape(format!("no assignment row for language entry {i}")))?;
        if p <= 0.0 {
            return Err(Error::InfiniteComplexity { index: i });
        }
        cross_entropy -= p.ln();
    }
    let kl = if cfg.beta == 0.0 {
        0.0
    } else {
        gaussian_kl(
            params_post.as_flat(),
            params_pre.as_flat(),
            cfg.posterior_sigma,
            cfg.prior_sigma,
        )?
    };
    Ok(cross_entropy + cfg.beta * kl)
}
