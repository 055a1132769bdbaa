//! Confidence ranking of the learned clusters and the learnable/memorizable
//! split.
//!
//! A cluster's confidence is the mean assignment probability of its members
//! to it. Clusters at or above the threshold are learnable; every point in a
//! cluster below it is memorizable. Noise is never given a cluster of its
//! own; it shows up as membership of low-confidence clusters.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::contrastive::{cluster_probability, MemoryBank};
use crate::datagen::Datastream;
use crate::encoder::{Embedding, EncoderParams};
use crate::error::{Error, Result};
use crate::numcore::argmax;

/// Soft assignments `P[i][l]` and the argmax labels (ties to the lowest index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub probabilities: Vec<Vec<f64>>,
    pub hard_labels: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn from_rows(probabilities: Vec<Vec<f64>>) -> Self {
        let hard_labels = probabilities.iter().map(|r| argmax(r)).collect();
        Self {
            probabilities,
            hard_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.probabilities.first().map_or(0, Vec::len)
    }
}

pub fn embed_all(data: &Datastream, encoder: &EncoderParams) -> Result<Vec<Embedding>> {
    data.points.iter().map(|p| encoder.forward(&p.x)).collect()
}

/// Assigns every clean (unperturbed) record against the memory bank.
pub fn assign_all(data: &Datastream, encoder: &EncoderParams, bank: &MemoryBank, tau: f64) -> Result<AssignmentMatrix> {
    let rows = embed_all(data, encoder)?
        .iter()
        .map(|z| cluster_probability(z, bank, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(AssignmentMatrix::from_rows(rows))
}

/// Mean of `P[i][l]` over the points labeled `l`; zero for empty clusters.
pub fn cluster_confidence(assignments: &AssignmentMatrix) -> Vec<f64> {
    let m = assignments.num_clusters();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (row, &l) in assignments.probabilities.iter().zip(&assignments.hard_labels) {
        sums[l] += row[l];
        counts[l] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// How the confidence cutoff is chosen. Serialized as a number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr", into = "ThresholdRepr")]
pub enum Threshold {
    Fixed(f64),
    /// Cut at the largest gap between consecutive sorted confidences of the
    /// non-empty clusters.
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Fixed(f64),
    Named(String),
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = String;

    fn try_from(r: ThresholdRepr) -> std::result::Result<Self, String> {
        match r {
            ThresholdRepr::Fixed(t) if t >= 0.0 && t.is_finite() => Ok(Threshold::Fixed(t)),
            ThresholdRepr::Fixed(t) => Err(format!("threshold must be finite and >= 0, got {t}")),
            ThresholdRepr::Named(s) if s == "auto" => Ok(Threshold::Auto),
            ThresholdRepr::Named(s) => Err(format!("threshold must be a number or \"auto\", got \"{s}\"")),
        }
    }
}

impl From<Threshold> for ThresholdRepr {
    fn from(t: Threshold) -> Self {
        match t {
            Threshold::Fixed(v) => ThresholdRepr::Fixed(v),
            Threshold::Auto => ThresholdRepr::Named("auto".into()),
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed(0.7)
    }
}

/// Threshold at the largest gap in the descending confidence sequence: the
/// confidence just above the gap. Ties between equal gaps go to the first.
/// Fewer than two confidences means everything is learnable.
pub fn auto_threshold(confidences: &[f64]) -> f64 {
    let mut sorted = confidences.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, f64)> = None;
    for pair in sorted.windows(2) {
        let gap = pair[0] - pair[1];
        if best.is_none_or(|(g, _)| gap > g) {
            best = Some((gap, pair[0]));
        }
    }
    best.map_or(0.0, |(_, upper)| upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub confidences: Vec<f64>,
    /// Cluster indices by descending confidence, ties by lower index.
    pub ranking: Vec<usize>,
    pub learnable_ids: Vec<usize>,
    pub memorizable_ids: Vec<usize>,
    pub threshold: f64,
}

impl SplitReport {
    pub fn is_learnable_cluster(&self, l: usize) -> bool {
        self.confidences[l] >= self.threshold
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn rank_and_split(confidences: &[f64], hard_labels: &[usize], threshold: f64) -> Result<SplitReport> {
    if !(threshold >= 0.0) || threshold.is_nan() {
        return Err(Error::domain(format!(
            "confidence threshold must be >= 0, got {threshold}"
        )));
    }
    let m = confidences.len();
    if let Some(&bad) = hard_labels.iter().find(|&&l| l >= m) {
        return Err(Error::domain(format!("hard label {bad} out of range for {m} clusters")));
    }
    let mut ranking: Vec<usize> = (0..m).collect();
    // stable sort keeps lower indices first among equal confidences
    ranking.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let (learnable_ids, memorizable_ids) =
        (0..hard_labels.len()).partition(|&i| confidences[hard_labels[i]] >= threshold);
    Ok(SplitReport {
        confidences: confidences.to_vec(),
        ranking,
        learnable_ids,
        memorizable_ids,
        threshold,
    })
}

/// Confidence scoring and split in one step, resolving `Threshold::Auto`
/// over the non-empty clusters.
pub fn split_assignments(assignments: &AssignmentMatrix, threshold: Threshold) -> Result<SplitReport> {
    let conf = cluster_confidence(assignments);
    let theta = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::Auto => {
            let used: BTreeSet<usize> = assignments.hard_labels.iter().copied().collect();
            let present: Vec<f64> = used.iter().map(|&l| conf[l]).collect();
            auto_threshold(&present)
        }
    };
    rank_and_split(&conf, &assignments.hard_labels, theta)
}

/// Fraction of labeled points whose cluster matches their true content under
/// the best one-to-one matching between contents and clusters. Exhaustive
/// search; intended for small cluster counts.
pub fn matched_accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return 0.0;
    }
    let nt = truth.iter().max().unwrap() + 1;
    let np = predicted.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; np]; nt];
    for (&t, &p) in truth.iter().zip(predicted) {
        table[t][p] += 1;
    }
    fn search(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        // a content may also stay unmatched when there are more contents than clusters
        let mut best = search(table, row + 1, used);
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                best = best.max(table[row][col] + search(table, row + 1, used));
                used[col] = false;
            }
        }
        best
    }
    let matched = search(&table, 0, &mut vec![false; np]);
    matched as f64 / truth.len() as f64
}

/// Precision and recall of `memorizable_ids` as a detector of noise points.
pub fn noise_detection(memorizable_ids: &[usize], is_noise: &[bool]) -> (f64, f64) {
    let flagged: BTreeSet<usize> = memorizable_ids.iter().copied().collect();
    let true_pos = flagged.iter().filter(|&&i| is_noise[i]).count() as f64;
    let actual = is_noise.iter().filter(|&&n| n).count() as f64;
    let precision = if flagged.is_empty() {
        0.0
    } else {
        true_pos / flagged.len() as f64
    };
    let recall = if actual == 0.0 { 0.0 } else { true_pos / actual };
    (precision, recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::DataPoint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_point_single_cluster() {
        let data = Datastream {
            points: vec![DataPoint {
                x: vec![1.0, 2.0],
                truth_content: None,
                is_noise: None,
            }],
            record_bits: 128,
        };
        let enc = EncoderParams::identity(2);
        let mut bank = MemoryBank::new(1, 4).unwrap();
        bank.push(0, Embedding::normalize(vec![0.0, 1.0]).unwrap()).unwrap();
        let a = assign_all(&data, &enc, &bank, 0.1).unwrap();
        assert_eq!(a.probabilities, vec![vec![1.0]]);
        assert_eq!(a.hard_labels, vec![0]);

        let twice = Datastream {
            points: vec![data.points[0].clone(), data.points[0].clone()],
            record_bits: 128,
        };
        let a = assign_all(&twice, &enc, &bank, 0.1).unwrap();
        assert_eq!(a.probabilities[0], a.probabilities[1]);
    }

    #[test]
    fn confidence_cases() {
        let one_hot = AssignmentMatrix::from_rows(vec![vec![1.0, 0.0]; 3]);
        assert_eq!(cluster_confidence(&one_hot), vec![1.0, 0.0]);

        let uniform = AssignmentMatrix {
            probabilities: vec![vec![0.5, 0.5]; 2],
            hard_labels: vec![0, 1],
        };
        assert_eq!(cluster_confidence(&uniform), vec![0.5, 0.5]);

        let rows = AssignmentMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.4, 0.6]]);
        let conf = cluster_confidence(&rows);
        assert_abs_diff_eq!(conf[0], 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(conf[1], 0.6, epsilon = 1e-15);

        let split = rank_and_split(&conf, &rows.hard_labels, 0.7).unwrap();
        assert_eq!(split.ranking, vec![0, 1]);
        assert_eq!(split.learnable_ids, vec![0, 1]);
        assert_eq!(split.memorizable_ids, vec![2]);
    }

    #[test]
    fn threshold_extremes() {
        let conf = [1.0, 0.3, 0.0];
        let labels = [0, 1, 2, 1, 0];
        let all = rank_and_split(&conf, &labels, 0.0).unwrap();
        assert_eq!(all.learnable_ids.len(), 5);
        let none = rank_and_split(&conf, &labels, 1.0 + f64::EPSILON).unwrap();
        assert_eq!(none.memorizable_ids.len(), 5);
        assert!(rank_and_split(&conf, &[3], 0.5).is_err());
    }

    #[test]
    fn auto_threshold_uses_largest_gap() {
        let conf = [0.9, 0.88, 0.3];
        let theta = auto_threshold(&conf);
        assert_eq!(theta, 0.88);
        let split = rank_and_split(&conf, &[0, 1, 2], theta).unwrap();
        assert_eq!(split.learnable_ids, vec![0, 1]);
        assert_eq!(split.memorizable_ids, vec![2]);
        assert_eq!(auto_threshold(&[0.4]), 0.0);
    }

    #[test]
    fn auto_mode_ignores_empty_clusters() {
        let a = AssignmentMatrix {
            probabilities: vec![vec![0.95, 0.05, 0.0], vec![0.2, 0.8, 0.0]],
            hard_labels: vec![0, 1],
        };
        let split = split_assignments(&a, Threshold::Auto).unwrap();
        assert_eq!(split.threshold, 0.95);
        assert_eq!(split.memorizable_ids, vec![1]);
    }

    #[test]
    fn accuracy_under_permutation() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [2, 2, 0, 0, 1, 0];
        assert_abs_diff_eq!(matched_accuracy(&truth, &pred), 5.0 / 6.0, epsilon = 1e-15);
        // more clusters than contents
        assert_eq!(matched_accuracy(&[0, 0, 1], &[4, 4, 2]), 1.0);
    }

    #[test]
    fn precision_recall() {
        let noise = [true, false, true, false];
        assert_eq!(noise_detection(&[0, 1], &noise), (0.5, 0.5));
        assert_eq!(noise_detection(&[0, 2], &noise), (1.0, 1.0));
    }

    #[test]
    fn split_report_json_fields() {
        let split = rank_and_split(&[0.9, 0.2], &[0, 1, 0], 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&split.to_json().unwrap()).unwrap();
        assert_eq!(v["ranking"], serde_json::json!([0, 1]));
        assert_eq!(v["learnable_ids"], serde_json::json!([0, 2]));
        assert_eq!(v["memorizable_ids"], serde_json::json!([1]));
        assert_eq!(v["threshold"], serde_json::json!(0.5));
    }

    proptest! {
        #[test]
        fn split_partitions_and_is_monotone(
            conf in prop::collection::vec(0.0f64..=1.0, 1..6),
            raw in prop::collection::vec(0usize..100, 0..40),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let labels: Vec<usize> = raw.iter().map(|l| l % conf.len()).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = rank_and_split(&conf, &labels, lo).unwrap();
            let b = rank_and_split(&conf, &labels, hi).unwrap();
            let mut all: Vec<usize> = a.learnable_ids.iter().chain(&a.memorizable_ids).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for i in &a.memorizable_ids {
                prop_assert!(b.memorizable_ids.contains(i));
            }
            let mut r = a.ranking.clone();
            r.sort_unstable();
            prop_assert_eq!(r, (0..conf.len()).collect::<Vec<_>>());
        }

        #[test]
        fn ranking_invariant_under_increasing_transform(conf in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            let transformed: Vec<f64> = conf.iter().map(|c| (3.0 * c).exp() + 2.0).collect();
            let a = rank_and_split(&conf, &[], 0.5).unwrap();
            let b = rank_and_split(&transformed, &[], 0.5).unwrap();
            prop_assert_eq!(a.ranking, b.ranking);
        }
    }
}
