use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    assignment_entropy_grad, build_contrastive_set, cluster_probability, instance_loss_grad, total_loss,
    ContrastiveSet, MemoryBank,
};
use crate::augment::{two_views, PerturbPolicy};
use crate::datagen::Datastream;
use crate::encoder::{Embedding, EncoderParams, EncoderState, Gradient};
use crate::error::{Error, Result};
use crate::numcore::{argmax, cosine, Rng};
use crate::report::format_float;

/// Rounds of cosine k-means used to seed the memory bank.
const BOOTSTRAP_ROUNDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tau: f64,
    /// Weight of the instance loss.
    pub eta: f64,
    /// Weight of the cluster loss.
    pub epsilon: f64,
    pub omega: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per anchor (K).
    pub negatives: usize,
    /// Number of clusters (M).
    pub clusters: usize,
    pub capacity_per_cluster: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub augment: PerturbPolicy,
    /// Not read from configuration files; runs set it from their own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            eta: 1.0,
            epsilon: 1.0,
            omega: 0.9,
            lr: 0.02,
            epochs: 200,
            batch_size: 32,
            negatives: 32,
            clusters: 6,
            capacity_per_cluster: 64,
            hidden_dim: 32,
            embed_dim: 8,
            augment: PerturbPolicy::default(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("clusters", self.clusters),
            ("capacity_per_cluster", self.capacity_per_cluster),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::domain("tau must be finite and > 0"));
        }
        if !(self.eta >= 0.0 && self.epsilon >= 0.0) {
            return Err(Error::domain("loss weights must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::domain("omega must lie in [0, 1]"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::domain("lr must be finite and >= 0"));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_instance: f64,
    pub mean_cluster: f64,
    pub mean_total: f64,
}

/// Seeds the bank from the momentum encoder's embeddings of the clean inputs:
/// farthest-point initial centers, then cosine k-means rounds. Each buffer is
/// filled with the most recent members of its cluster in stream order.
pub fn bootstrap_bank(
    momentum: &EncoderParams,
    data: &Datastream,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<MemoryBank> {
    if data.is_empty() {
        return Err(Error::domain("cannot bootstrap a memory bank from an empty stream"));
    }
    let embeddings = data
        .points
        .iter()
        .map(|p| momentum.forward(&p.x))
        .collect::<Result<Vec<Embedding>>>()?;
    let labels = cosine_kmeans(&embeddings, cfg.clusters, BOOTSTRAP_ROUNDS, rng)?;
    let mut bank = MemoryBank::new(cfg.clusters, cfg.capacity_per_cluster)?;
    for (e, l) in embeddings.into_iter().zip(labels) {
        bank.push(l, e)?;
    }
    Ok(bank)
}

fn cosine_kmeans(points: &[Embedding], k: usize, rounds: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let first = rng.sample_indices(points.len(), 1)[0];
    let mut centers: Vec<Vec<f64>> = vec![points[first].as_slice().to_vec()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| cosine(p.as_slice(), &centers[0]).map(|c| 1.0 - c))
        .collect::<Result<_>>()?;
    while centers.len() < k.min(points.len()) {
        let far = argmax(&nearest);
        let c = points[far].as_slice().to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(1.0 - cosine(p.as_slice(), &c)?);
        }
        centers.push(c);
    }

    let assign = |centers: &[Vec<f64>]| -> Result<Vec<usize>> {
        points
            .iter()
            .map(|p| {
                let sims = centers
                    .iter()
                    .map(|c| cosine(p.as_slice(), c))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(argmax(&sims))
            })
            .collect()
    };

    let mut labels = assign(&centers)?;
    for _ in 0..rounds {
        let dim = points[0].dim();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(p.as_slice()) {
                *s += v;
            }
        }
        for (c, s) in centers.iter_mut().zip(sums) {
            // empty or cancelling clusters keep their previous center
            if let Ok(e) = Embedding::normalize(s) {
                *c = e.into_inner();
            }
        }
        labels = assign(&centers)?;
    }
    Ok(labels)
}

/// Batch objective `η·mean(L_I) + ε·mean(L_D)` as a function of the online
/// parameters, with positives, negatives and the bank held fixed.
/// Returns `(mean L_I, mean L_D, gradient)`.
pub fn composed_batch_loss(
    params: &EncoderParams,
    anchors: &[Vec<f64>],
    positives: &[Embedding],
    negatives: &[ContrastiveSet],
    bank: &MemoryBank,
    cfg: &TrainConfig,
) -> Result<(f64, f64, Gradient)> {
    let batch = anchors.len();
    if batch == 0 || positives.len() != batch || negatives.len() != batch {
        return Err(Error::Shape(
            "anchors, positives and negatives must have equal non-zero length".into(),
        ));
    }
    let scale = 1.0 / batch as f64;
    let mut grad = params.zeros_like();
    let (mut sum_i, mut sum_d) = (0.0, 0.0);
    for i in 0..batch {
        let trace = params.forward_trace(&anchors[i])?;
        let a = trace.embedding();
        let (li, gi) = instance_loss_grad(a, &positives[i], &negatives[i], cfg.tau)?;
        let (ld, _, gd) = assignment_entropy_grad(a, bank, cfg.tau)?;
        let upstream: Vec<f64> = gi
            .iter()
            .zip(&gd)
            .map(|(x, y)| scale * (cfg.eta * x + cfg.epsilon * y))
            .collect();
        params.backward_into(&trace, &upstream, &mut grad)?;
        sum_i += li;
        sum_d += ld;
    }
    Ok((sum_i * scale, sum_d * scale, grad))
}

/// One pass over `data` in a seeded random order.
pub fn train_epoch(
    state: &mut EncoderState,
    bank: &mut MemoryBank,
    data: &Datastream,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut Rng,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty stream"));
    }
    if bank.is_empty() {
        return Err(Error::domain("memory bank must be bootstrapped before training"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);

    let (mut sum_i, mut sum_d) = (0.0, 0.0);
    for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let ctx = |sample: usize, e: Error| Error::Training {
            epoch,
            batch: batch_idx,
            sample,
            source: Box::new(e),
        };
        let mut anchors = Vec::with_capacity(chunk.len());
        let mut positives = Vec::with_capacity(chunk.len());
        let mut negatives = Vec::with_capacity(chunk.len());
        let mut assigned = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let (v1, v2) = two_views(&data.points[idx].x, &cfg.augment, rng);
            let a = state.online.forward(&v1).map_err(|e| ctx(idx, e))?;
            let b = state.momentum.forward(&v2).map_err(|e| ctx(idx, e))?;
            let p = cluster_probability(&a, bank, cfg.tau).map_err(|e| ctx(idx, e))?;
            let cluster = argmax(&p);
            negatives.push(build_contrastive_set(bank, cluster, cfg.negatives, rng)?);
            anchors.push(v1);
            positives.push(b);
            assigned.push(cluster);
        }
        let (li, ld, grad) = composed_batch_loss(&state.online, &anchors, &positives, &negatives, bank, cfg)
            .map_err(|e| ctx(chunk[0], e))?;
        state.online.sgd_step(&grad, cfg.lr)?;
        state.momentum.momentum_update(&state.online, cfg.omega)?;
        for (b, l) in positives.into_iter().zip(assigned) {
            bank.push(l, b)?;
        }
        sum_i += li * chunk.len() as f64;
        sum_d += ld * chunk.len() as f64;
    }
    let n = data.len() as f64;
    let (mean_instance, mean_cluster) = (sum_i / n, sum_d / n);
    Ok(EpochMetrics {
        epoch,
        mean_instance,
        mean_cluster,
        mean_total: total_loss(mean_instance, mean_cluster, cfg.eta, cfg.epsilon),
    })
}

/// Encoder pair and memory bank after training.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub state: EncoderState,
    pub bank: MemoryBank,
    pub metrics: Vec<EpochMetrics>,
}

/// Initializes from `cfg.seed`, bootstraps the bank, and runs `cfg.epochs` epochs.
pub fn train(data: &Datastream, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty stream"));
    }
    let root = Rng::new(cfg.seed);
    let mut init_rng = root.child(0);
    let mut state = EncoderState::init(data.dim(), cfg.hidden_dim, cfg.embed_dim, &mut init_rng);
    let mut bank = bootstrap_bank(&state.momentum, data, cfg, &mut root.child(1))?;
    let mut rng = root.child(2);
    let metrics = (1..=cfg.epochs)
        .map(|epoch| train_epoch(&mut state, &mut bank, data, cfg, epoch, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel { state, bank, metrics })
}

/// Writes `epoch,mean_L_I,mean_L_D,mean_L_T` rows.
pub fn write_metrics_csv<W: Write>(out: &mut W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_L_I,mean_L_D,mean_L_T")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{}",
            m.epoch,
            format_float(m.mean_instance),
            format_float(m.mean_cluster),
            format_float(m.mean_total)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_mixture, MixtureConfig};

    fn small_stream() -> Datastream {
        synth_mixture(&MixtureConfig {
            points: 120,
            dim: 8,
            noise_fraction: 0.0,
            ..MixtureConfig::default()
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            clusters: 4,
            hidden_dim: 8,
            embed_dim: 4,
            capacity_per_cluster: 16,
            negatives: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = small_stream();
        let cfg = TrainConfig { lr: 0.0, ..small_cfg() };
        let root = Rng::new(cfg.seed);
        let initial = EncoderState::init(data.dim(), cfg.hidden_dim, cfg.embed_dim, &mut root.child(0));
        let model = train(&data, &cfg).unwrap();
        assert_eq!(model.state, initial);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_stream();
        let a = train(&data, &small_cfg()).unwrap();
        let b = train(&data, &small_cfg()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.state, b.state);
        assert_eq!(a.bank, b.bank);
    }

    #[test]
    fn bootstrap_fills_bank_within_capacity() {
        let data = small_stream();
        let cfg = small_cfg();
        let state = EncoderState::init(data.dim(), cfg.hidden_dim, cfg.embed_dim, &mut Rng::new(1));
        let bank = bootstrap_bank(&state.momentum, &data, &cfg, &mut Rng::new(2)).unwrap();
        assert_eq!(bank.num_clusters(), 4);
        assert!(!bank.is_empty());
        bank.validate().unwrap();
    }

    #[test]
    fn metrics_csv_layout() {
        let mut buf = Vec::new();
        write_metrics_csv(
            &mut buf,
            &[EpochMetrics {
                epoch: 1,
                mean_instance: 0.5,
                mean_cluster: 0.25,
                mean_total: 0.75,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,mean_L_I,mean_L_D,mean_L_T\n1,0.5,0.25,0.75\n"
        );
    }
}
