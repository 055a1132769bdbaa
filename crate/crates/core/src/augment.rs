//! Perturbations that produce the two training views of each record.
//!
//! Composition order is fixed: scale jitter, then additive Gaussian noise,
//! then zeroing of a random coordinate subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbPolicy {
    pub noise_sigma: f64,
    pub mask_fraction: f64,
    /// Half-width of the multiplicative jitter interval around 1.
    pub scale_jitter: f64,
}

impl PerturbPolicy {
    pub const IDENTITY: PerturbPolicy = PerturbPolicy {
        noise_sigma: 0.0,
        mask_fraction: 0.0,
        scale_jitter: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::domain("noise_sigma must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::domain("mask_fraction must lie in [0, 1]"));
        }
        if !(self.scale_jitter >= 0.0) || !self.scale_jitter.is_finite() {
            return Err(Error::domain("scale_jitter must be finite and >= 0"));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0 && self.mask_fraction == 0.0 && self.scale_jitter == 0.0
    }
}

impl Default for PerturbPolicy {
    fn default() -> Self {
        Self {
            noise_sigma: 0.3,
            mask_fraction: 0.1,
            scale_jitter: 0.1,
        }
    }
}

pub fn perturb(x: &[f64], policy: &PerturbPolicy, rng: &mut Rng) -> Vec<f64> {
    if policy.is_identity() {
        return x.to_vec();
    }
    let mut out = x.to_vec();
    if policy.scale_jitter > 0.0 {
        let factor = rng.uniform_in(1.0 - policy.scale_jitter, 1.0 + policy.scale_jitter);
        for v in &mut out {
            *v *= factor;
        }
    }
    if policy.noise_sigma > 0.0 {
        for v in &mut out {
            *v += policy.noise_sigma * rng.normal();
        }
    }
    let masked = (policy.mask_fraction * x.len() as f64).floor() as usize;
    if masked > 0 {
        for i in rng.sample_indices(x.len(), masked) {
            out[i] = 0.0;
        }
    }
    out
}

/// Two independent draws from the same policy.
pub fn two_views(x: &[f64], policy: &PerturbPolicy, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let first = perturb(x, policy, rng);
    let second = perturb(x, policy, rng);
    (first, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    #[test]
    fn identity_policy_is_identity() {
        let x = [1.0, -2.0, 0.5];
        let mut rng = Rng::new(3);
        assert_eq!(perturb(&x, &PerturbPolicy::IDENTITY, &mut rng), x.to_vec());
        let (a, b) = two_views(&x, &PerturbPolicy::IDENTITY, &mut rng);
        assert_eq!(a, x.to_vec());
        assert_eq!(b, x.to_vec());
    }

    #[test]
    fn full_mask_zeroes_everything() {
        let policy = PerturbPolicy {
            mask_fraction: 1.0,
            ..PerturbPolicy::default()
        };
        let out = perturb(&[1.0, 2.0, 3.0, 4.0], &policy, &mut Rng::new(1));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_is_zero_mean() {
        // 10^4 draws: the sample mean has std sigma/100, so 4 sigma/100 is a 4-sd band.
        let x = [0.5, -1.0, 2.0];
        let sigma = 0.1;
        let policy = PerturbPolicy {
            noise_sigma: sigma,
            ..PerturbPolicy::IDENTITY
        };
        let mut rng = Rng::new(2024);
        let draws = 10_000;
        let mut sums = [0.0; 3];
        for _ in 0..draws {
            for (s, v) in sums.iter_mut().zip(perturb(&x, &policy, &mut rng)) {
                *s += v;
            }
        }
        for (s, xi) in sums.iter().zip(x) {
            assert!((s / draws as f64 - xi).abs() <= 4.0 * sigma / 100.0);
        }
    }

    #[test]
    fn views_are_reproducible_and_distinct() {
        let x = [0.3; 8];
        let policy = PerturbPolicy {
            noise_sigma: 0.05,
            ..PerturbPolicy::IDENTITY
        };
        let a = two_views(&x, &policy, &mut Rng::new(11));
        let b = two_views(&x, &policy, &mut Rng::new(11));
        assert_eq!(a, b);
        let mut rng = Rng::new(12);
        for _ in 0..100 {
            let (u, v) = two_views(&x, &policy, &mut rng);
            assert!(u.iter().zip(&v).any(|(p, q)| p != q));
        }
    }

    proptest! {
        #[test]
        fn dimension_is_preserved(
            x in prop::collection::vec(-5.0f64..5.0, 1..20),
            sigma in 0.0f64..1.0,
            mask in 0.0f64..=1.0,
            jitter in 0.0f64..0.5,
            seed in any::<u64>(),
        ) {
            let policy = PerturbPolicy { noise_sigma: sigma, mask_fraction: mask, scale_jitter: jitter };
            prop_assert_eq!(perturb(&x, &policy, &mut Rng::new(seed)).len(), x.len());
        }
    }
}
