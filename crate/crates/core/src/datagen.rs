//! Source datastreams: a labeled synthetic Gaussian mixture with a uniform
//! noise source, and raw fixed-size binary records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{norm, Rng};

/// Standard deviation of every mixture component.
pub const COMPONENT_STD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub truth_content: Option<usize>,
    pub is_noise: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastream {
    pub points: Vec<DataPoint>,
    /// Size of one raw record on the wire.
    pub record_bits: u64,
}

impl Datastream {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.x.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub n_contents: usize,
    pub dim: usize,
    pub points: usize,
    pub noise_fraction: f64,
    /// Minimum center distance in units of the component std.
    pub separation: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            n_contents: 4,
            dim: 16,
            points: 2000,
            noise_fraction: 0.2,
            separation: 8.0,
            seed: 7,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_contents == 0 || self.dim == 0 || self.points == 0 {
            return Err(Error::domain("n_contents, dim and points must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(Error::domain("noise_fraction must lie in [0, 1]"));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::domain("separation must be finite and > 0"));
        }
        Ok(())
    }

    /// Number of noise points; the rest are split evenly over the contents.
    pub fn noise_points(&self) -> usize {
        (self.noise_fraction * self.points as f64).round() as usize
    }
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Farthest-point selection of `count` directions from random candidates on
/// the unit sphere. Returns the directions and their minimum pairwise distance.
fn spread_directions(count: usize, dim: usize, rng: &mut Rng) -> (Vec<Vec<f64>>, f64) {
    let candidates: Vec<Vec<f64>> = (0..(64 * count).max(256)).map(|_| random_unit(dim, rng)).collect();
    let mut chosen = vec![candidates[0].clone()];
    let mut nearest: Vec<f64> = candidates.iter().map(|c| distance(c, &chosen[0])).collect();
    while chosen.len() < count {
        let mut best = 0;
        for (i, d) in nearest.iter().enumerate() {
            if *d > nearest[best] {
                best = i;
            }
        }
        let pick = candidates[best].clone();
        for (d, c) in nearest.iter_mut().zip(&candidates) {
            *d = d.min(distance(c, &pick));
        }
        chosen.push(pick);
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..chosen.len() {
        for j in i + 1..chosen.len() {
            min_dist = min_dist.min(distance(&chosen[i], &chosen[j]));
        }
    }
    (chosen, min_dist)
}

/// Component centers, pairwise at least `separation * COMPONENT_STD` apart.
pub fn mixture_centers(cfg: &MixtureConfig, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let (dirs, min_dist) = spread_directions(cfg.n_contents, cfg.dim, rng);
    let min_dist = if cfg.n_contents == 1 {
        std::f64::consts::SQRT_2
    } else {
        min_dist
    };
    if min_dist < 1e-6 {
        return Err(Error::domain(format!(
            "cannot place {} separated centers in dimension {}",
            cfg.n_contents, cfg.dim
        )));
    }
    let radius = cfg.separation * COMPONENT_STD / min_dist;
    Ok(dirs
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * radius).collect())
        .collect())
}

/// Labeled synthetic stream. Content points are Gaussian around separated
/// centers; noise points are uniform over the centers' bounding box padded by
/// three standard deviations. Points come out shuffled.
pub fn synth_mixture(cfg: &MixtureConfig) -> Result<Datastream> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let centers = mixture_centers(cfg, &mut rng)?;

    let n_noise = cfg.noise_points();
    let n_content = cfg.points - n_noise;
    let mut points = Vec::with_capacity(cfg.points);
    for i in 0..n_content {
        let label = i % cfg.n_contents;
        let x = centers[label]
            .iter()
            .map(|c| c + COMPONENT_STD * rng.normal())
            .collect();
        points.push(DataPoint {
            x,
            truth_content: Some(label),
            is_noise: Some(false),
        });
    }

    let pad = 3.0 * COMPONENT_STD;
    let bounds: Vec<(f64, f64)> = (0..cfg.dim)
        .map(|j| {
            let lo = centers.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min);
            let hi = centers.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max);
            (lo - pad, hi + pad)
        })
        .collect();
    for _ in 0..n_noise {
        let x = bounds.iter().map(|&(lo, hi)| rng.uniform_in(lo, hi)).collect();
        points.push(DataPoint {
            x,
            truth_content: None,
            is_noise: Some(true),
        });
    }
    rng.shuffle(&mut points);

    Ok(Datastream {
        points,
        record_bits: 64 * cfg.dim as u64,
    })
}

fn source_entropy(n_contents: usize, noise_fraction: f64) -> f64 {
    let xlnx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let per_content = (1.0 - noise_fraction) / n_contents as f64;
    -(n_contents as f64 * xlnx(per_content) + xlnx(noise_fraction))
}

/// Entropy (nats) of the categorical distribution over generating sources:
/// `n_contents` equiprobable components plus the noise source.
pub fn content_complexity(cfg: &MixtureConfig) -> f64 {
    source_entropy(cfg.n_contents, cfg.noise_fraction)
}

/// Mixture whose [`content_complexity`] equals `nats`.
///
/// The content count is `⌊e^nats⌋` and the noise fraction is solved by
/// bisection on `[0, 1/(n+1)]`, where the entropy rises monotonically from
/// `ln n` to `ln(n+1)`. Every other field is copied from `base`.
pub fn mixture_for_complexity(nats: f64, base: &MixtureConfig) -> Result<MixtureConfig> {
    if !(nats >= 0.0) || !nats.is_finite() {
        return Err(Error::domain(format!(
            "content complexity must be finite and >= 0, got {nats}"
        )));
    }
    let n_contents = ((nats.exp() + 1e-9).floor() as usize).max(1);
    let (mut lo, mut hi) = (0.0, 1.0 / (n_contents as f64 + 1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if source_entropy(n_contents, mid) < nats {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MixtureConfig {
        n_contents,
        noise_fraction: 0.5 * (lo + hi),
        ..base.clone()
    })
}

/// Reads fixed-size records from a binary file, one data point per record.
pub fn ingest_binary(path: &Path, record_bytes: usize, normalize: bool) -> Result<Datastream> {
    if record_bytes == 0 {
        return Err(Error::domain("record_bytes must be positive"));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "empty record file".into(),
        });
    }
    let rem = bytes.len() % record_bytes;
    if rem != 0 {
        return Err(Error::Format {
            offset: (bytes.len() - rem) as u64,
            message: format!(
                "file size {} is not a multiple of record size {record_bytes}",
                bytes.len()
            ),
        });
    }
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let points = bytes
        .chunks_exact(record_bytes)
        .map(|chunk| DataPoint {
            x: chunk.iter().map(|&b| b as f64 * scale).collect(),
            truth_content: None,
            is_noise: None,
        })
        .collect();
    Ok(Datastream {
        points,
        record_bits: 8 * record_bytes as u64,
    })
}
