//! Instance and cluster discrimination.
//!
//! Per-cluster memory banks hold stale embeddings produced by the momentum
//! encoder. The instance loss matches two views of a record against
//! negatives drawn from the other clusters' banks; the cluster loss is the
//! entropy of the soft assignment of an embedding to the banks. Gradients
//! are taken with respect to the anchor embedding only; bank contents and
//! the positive view are constants.

mod train;

pub use train::{
    bootstrap_bank, composed_batch_loss, train, train_epoch, write_metrics_csv, EpochMetrics, TrainConfig, TrainedModel,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::numcore::{cosine, log_sum_exp, Rng};

/// Ring buffers of stale unit-norm embeddings, one per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    capacity: usize,
    clusters: Vec<VecDeque<Embedding>>,
}

impl MemoryBank {
    pub fn new(clusters: usize, capacity: usize) -> Result<Self> {
        if clusters == 0 || capacity == 0 {
            return Err(Error::domain(
                "memory bank needs at least one cluster and capacity >= 1",
            ));
        }
        Ok(Self {
            capacity,
            clusters: vec![VecDeque::with_capacity(capacity); clusters],
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cluster(&self, l: usize) -> &VecDeque<Embedding> {
        &self.clusters[l]
    }

    pub fn total_len(&self) -> usize {
        self.clusters.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn embed_dim(&self) -> Option<usize> {
        self.clusters.iter().flatten().next().map(Embedding::dim)
    }

    /// Appends `b` to buffer `cluster`, evicting the oldest entry when full.
    pub fn push(&mut self, cluster: usize, b: Embedding) -> Result<()> {
        let m = self.clusters.len();
        let buf = self
            .clusters
            .get_mut(cluster)
            .ok_or_else(|| Error::domain(format!("cluster {cluster} out of range for {m} clusters")))?;
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(b);
        Ok(())
    }

    /// Structural check used after deserializing a checkpointed bank.
    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() || self.capacity == 0 {
            return Err(Error::domain("memory bank has no clusters or zero capacity"));
        }
        let dim = self.embed_dim();
        for buf in &self.clusters {
            if buf.len() > self.capacity {
                return Err(Error::domain("memory bank buffer exceeds its capacity"));
            }
            for e in buf {
                let n = crate::numcore::norm(e.as_slice());
                if (n - 1.0).abs() > 1e-9 || Some(e.dim()) != dim {
                    return Err(Error::domain("memory bank holds a non-unit or mis-sized embedding"));
                }
            }
        }
        Ok(())
    }
}

/// Negatives drawn from clusters other than the anchor's.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContrastiveSet {
    pub negatives: Vec<Embedding>,
}

impl ContrastiveSet {
    pub fn len(&self) -> usize {
        self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.negatives.is_empty()
    }
}

/// Samples up to `k` entries uniformly without replacement from every buffer
/// except `anchor_cluster`.
pub fn build_contrastive_set(
    bank: &MemoryBank,
    anchor_cluster: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<ContrastiveSet> {
    if anchor_cluster >= bank.num_clusters() {
        return Err(Error::domain(format!(
            "anchor cluster {anchor_cluster} out of range for {} clusters",
            bank.num_clusters()
        )));
    }
    let pool: Vec<&Embedding> = bank
        .clusters
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != anchor_cluster)
        .flat_map(|(_, buf)| buf.iter())
        .collect();
    let negatives = rng
        .sample_indices(pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    Ok(ContrastiveSet { negatives })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("temperature must be finite and > 0, got {tau}")))
    }
}

/// `-ln( e^{cos(a,b)/τ} / Σ_{c ∈ negs ∪ {b}} e^{cos(a,c)/τ} )`.
pub fn instance_loss(a: &Embedding, b: &Embedding, negs: &ContrastiveSet, tau: f64) -> Result<f64> {
    instance_loss_grad(a, b, negs, tau).map(|(loss, _)| loss)
}

/// Instance loss and its gradient with respect to the anchor `a`, treating
/// `a` as already normalized (the encoder's backward pass applies the
/// normalization Jacobian).
pub fn instance_loss_grad(a: &Embedding, b: &Embedding, negs: &ContrastiveSet, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    let mut logits = Vec::with_capacity(negs.len() + 1);
    logits.push(cosine(a.as_slice(), b.as_slice())? / tau);
    for c in &negs.negatives {
        logits.push(cosine(a.as_slice(), c.as_slice())? / tau);
    }
    let lse = log_sum_exp(&logits)?;
    let loss = lse - logits[0];

    let dim = a.dim();
    let mut grad = vec![0.0; dim];
    let candidates = std::iter::once(b).chain(&negs.negatives);
    for (idx, (c, s)) in candidates.zip(&logits).enumerate() {
        let p = (s - lse).exp();
        let coef = if idx == 0 { p - 1.0 } else { p } / tau;
        for (g, ci) in grad.iter_mut().zip(c.as_slice()) {
            *g += coef * ci;
        }
    }
    Ok((loss, grad))
}

/// Cosine logits of `a` against every bank entry, grouped per cluster.
struct BankScores {
    logits: Vec<Vec<f64>>,
    /// `ln Σ_{c ∈ C_l} e^{s_c}`, `None` for empty clusters.
    cluster_lse: Vec<Option<f64>>,
    total_lse: f64,
}

impl BankScores {
    fn compute(a: &Embedding, bank: &MemoryBank, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if bank.is_empty() {
            return Err(Error::domain("cluster probability needs a non-empty memory bank"));
        }
        let mut logits = Vec::with_capacity(bank.num_clusters());
        let mut cluster_lse = Vec::with_capacity(bank.num_clusters());
        for buf in &bank.clusters {
            let s = buf
                .iter()
                .map(|c| cosine(a.as_slice(), c.as_slice()).map(|v| v / tau))
                .collect::<Result<Vec<f64>>>()?;
            cluster_lse.push(if s.is_empty() { None } else { Some(log_sum_exp(&s)?) });
            logits.push(s);
        }
        let present: Vec<f64> = cluster_lse.iter().flatten().copied().collect();
        let total_lse = log_sum_exp(&present)?;
        Ok(Self {
            logits,
            cluster_lse,
            total_lse,
        })
    }

    fn probabilities(&self) -> Vec<f64> {
        self.cluster_lse
            .iter()
            .map(|l| l.map_or(0.0, |v| (v - self.total_lse).exp()))
            .collect()
    }
}

/// Soft assignment of `a` to each cluster's bank.
pub fn cluster_probability(a: &Embedding, bank: &MemoryBank, tau: f64) -> Result<Vec<f64>> {
    Ok(BankScores::compute(a, bank, tau)?.probabilities())
}

fn row_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Entropy of `a`'s soft assignment, the probabilities, and the gradient of
/// the entropy with respect to `a`.
pub fn assignment_entropy_grad(a: &Embedding, bank: &MemoryBank, tau: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let scores = BankScores::compute(a, bank, tau)?;
    let p = scores.probabilities();
    let entropy = row_entropy(&p);
    let mut grad = vec![0.0; a.dim()];
    for (l, buf) in bank.clusters.iter().enumerate() {
        if p[l] <= 0.0 {
            // every entry weight in an underflowed cluster is zero as well
            continue;
        }
        let factor = -(p[l].ln() + entropy) / tau;
        for (c, s) in buf.iter().zip(&scores.logits[l]) {
            let w = (s - scores.total_lse).exp();
            for (g, ci) in grad.iter_mut().zip(c.as_slice()) {
                *g += factor * w * ci;
            }
        }
    }
    Ok((entropy, p, grad))
}

/// Mean row entropy `(1/B) Σ_i Σ_l -P_il ln P_il`, with `0 ln 0 = 0`.
pub fn cluster_loss(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::domain("cluster loss of an empty batch"));
    }
    let mut total = 0.0;
    for (i, row) in rows.iter().enumerate() {
        if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::domain(format!(
                "row {i} has a negative or non-finite probability"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("row {i} sums to {sum}, not 1")));
        }
        // rounding can push a near-uniform row a hair past ln M
        total += row_entropy(row).clamp(0.0, (row.len() as f64).ln());
    }
    Ok(total / rows.len() as f64)
}

/// `η·L_I + ε·L_D`.
pub fn total_loss(instance: f64, cluster: f64, eta: f64, epsilon: f64) -> f64 {
    eta * instance + epsilon * cluster
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::normalize(v.to_vec()).unwrap()
    }

    #[test]
    fn exhaustive_and_empty_contrastive_sets() {
        let mut bank = MemoryBank::new(2, 8).unwrap();
        for i in 0..3 {
            bank.push(1, emb(&[1.0, i as f64])).unwrap();
        }
        bank.push(0, emb(&[0.0, 1.0])).unwrap();
        let set = build_contrastive_set(&bank, 0, 3, &mut Rng::new(0)).unwrap();
        assert_eq!(set.len(), 3);
        for e in bank.cluster(1) {
            assert!(set.negatives.contains(e));
        }

        let mut single = MemoryBank::new(1, 4).unwrap();
        single.push(0, emb(&[1.0, 0.0])).unwrap();
        assert!(build_contrastive_set(&single, 0, 5, &mut Rng::new(0))
            .unwrap()
            .is_empty());
        assert!(build_contrastive_set(&single, 1, 5, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn contrastive_set_excludes_anchor_cluster() {
        let mut bank = MemoryBank::new(3, 16).unwrap();
        for l in 0..3 {
            for i in 0..10 {
                // cluster id encoded in the first coordinate's sign pattern
                bank.push(l, emb(&[l as f64 + 1.0, i as f64 + 1.0, 0.5])).unwrap();
            }
        }
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let set = build_contrastive_set(&bank, 0, 5, &mut rng).unwrap();
            assert_eq!(set.len(), 5);
            for (i, e) in set.negatives.iter().enumerate() {
                assert!(!bank.cluster(0).contains(e));
                assert!(!set.negatives[i + 1..].contains(e));
            }
        }
    }

    #[test]
    fn instance_loss_cases() {
        let a = emb(&[1.0, 0.0]);
        let orth = emb(&[0.0, 1.0]);
        assert_eq!(instance_loss(&a, &a, &ContrastiveSet::default(), 0.1).unwrap(), 0.0);

        let one = ContrastiveSet { negatives: vec![orth] };
        let expected = (1.0 + (-10f64).exp()).ln();
        assert_abs_diff_eq!(instance_loss(&a, &a, &one, 0.1).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 4.53988e-5, epsilon = 1e-10);

        let same = ContrastiveSet {
            negatives: vec![a.clone()],
        };
        assert_abs_diff_eq!(instance_loss(&a, &a, &same, 0.37).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(instance_loss(&a, &a, &same, 0.0).is_err());
    }

    #[test]
    fn cluster_probability_cases() {
        let a = emb(&[1.0, 0.0]);
        let mut bank = MemoryBank::new(1, 4).unwrap();
        bank.push(0, emb(&[0.3, 0.7])).unwrap();
        assert_eq!(cluster_probability(&a, &bank, 0.1).unwrap(), vec![1.0]);

        let mut twin = MemoryBank::new(2, 4).unwrap();
        for l in 0..2 {
            twin.push(l, emb(&[0.3, 0.7])).unwrap();
            twin.push(l, emb(&[-0.2, 0.9])).unwrap();
        }
        let p = cluster_probability(&a, &twin, 0.5).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);

        let mut split = MemoryBank::new(2, 4).unwrap();
        split.push(0, a.clone()).unwrap();
        split.push(1, emb(&[0.0, 1.0])).unwrap();
        let p = cluster_probability(&a, &split, 0.1).unwrap();
        let e10 = 10f64.exp();
        assert_abs_diff_eq!(p[0], e10 / (e10 + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / (e10 + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.9999546, epsilon = 1e-7);
        assert_abs_diff_eq!(p[1], 4.53979e-5, epsilon = 1e-10);

        let mut empty_one = MemoryBank::new(3, 4).unwrap();
        empty_one.push(2, a.clone()).unwrap();
        let p = cluster_probability(&a, &empty_one, 0.1).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);

        assert!(cluster_probability(&a, &MemoryBank::new(2, 4).unwrap(), 0.1).is_err());
    }

    #[test]
    fn cluster_loss_cases() {
        let one_hot = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(cluster_loss(&one_hot).unwrap(), 0.0);
        let uniform = vec![vec![0.25; 4]; 3];
        assert_abs_diff_eq!(cluster_loss(&uniform).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cluster_loss(&uniform).unwrap(), 1.386294, epsilon = 1e-6);
        let mixed = vec![vec![0.5, 0.5], vec![1.0, 0.0]];
        assert_abs_diff_eq!(cluster_loss(&mixed).unwrap(), 2f64.ln() / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cluster_loss(&mixed).unwrap(), 0.346574, epsilon = 1e-6);
        assert!(cluster_loss(&[vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn total_loss_cases() {
        assert_abs_diff_eq!(total_loss(0.3, 0.2, 1.0, 1.0), 0.5, epsilon = 1e-15);
        assert_eq!(total_loss(0.3, 0.2, 2.0, 0.0), 0.6);
        assert_eq!(total_loss(0.3, 0.2, 0.0, 0.0), 0.0);
    }

    #[test]
    fn bank_is_fifo_and_isolated() {
        let e: Vec<Embedding> = (0..3).map(|i| emb(&[1.0, i as f64])).collect();
        let mut bank = MemoryBank::new(2, 2).unwrap();
        bank.push(1, e[2].clone()).unwrap();
        let other = bank.cluster(1).clone();
        bank.push(0, e[0].clone()).unwrap();
        assert_eq!(bank.cluster(0).iter().cloned().collect::<Vec<_>>(), vec![e[0].clone()]);
        bank.push(0, e[1].clone()).unwrap();
        bank.push(0, e[2].clone()).unwrap();
        assert_eq!(
            bank.cluster(0).iter().cloned().collect::<Vec<_>>(),
            vec![e[1].clone(), e[2].clone()]
        );
        assert_eq!(bank.cluster(1), &other);
        assert!(bank.push(2, e[0].clone()).is_err());
    }
}
