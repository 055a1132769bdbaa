//! Deterministic numerical kernels shared by the rest of the crate.
//!
//! Everything here works on plain `f64` slices. Probabilities and entropies
//! are in nats; conversion to bits happens only where lengths are reported.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine of a zero-norm vector"));
    }
    // The product nu*nv is symmetric, so cosine(u, v) == cosine(v, u) bitwise.
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Shift-stable `ln Σ exp(s_k)`.
pub fn log_sum_exp(s: &[f64]) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::domain("log_sum_exp of an empty list"));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("log_sum_exp of a non-finite value"));
    }
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Temperature softmax of `s / tau`.
pub fn softmax_t(s: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be > 0, got {tau}")));
    }
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = s.iter().map(|x| ((x - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + h;
            let up = f(&probe);
            probe[j] = orig - h;
            let down = f(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded ChaCha8 generator. Owned by exactly one consumer at a time; use
/// [`Rng::child`] to hand independent streams to sub-tasks.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `index`, derived from the seed only
    /// (not from how many draws this generator has made).
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(&mut self.inner)
    }

    /// `amount` distinct indices from `0..len`, uniformly.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, amount.min(len)).into_vec()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::Rng;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::RngCore;

    #[test]
    fn cosine_trivial_cases() {
        let v = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(cosine(&v, &v).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine(&v, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn log_sum_exp_cases() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        let a = -3.25;
        assert_abs_diff_eq!(log_sum_exp(&[a, a]).unwrap(), a + 2f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            log_sum_exp(&[1000.0, 1000.0]).unwrap(),
            1000.0 + 2f64.ln(),
            epsilon = 1e-12
        );
        assert!(log_sum_exp(&[-1e4, 1e4]).unwrap().is_finite());
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_t(&[2.0, 2.0, 2.0], 0.37).unwrap();
        for x in &p {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax_t(&[10.0, 0.0], 0.1).unwrap();
        assert!(p[0] >= 1.0 - 1e-40);
        let p = softmax_t(&[1.0, 0.0], 1e9).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-8);
        assert!(softmax_t(&[1.0], 0.0).is_err());
        assert!(softmax_t(&[1.0], -1.0).is_err());
    }

    #[test]
    fn finite_diff_cases() {
        let g = finite_diff_grad(|x| dot(x, x), &[1.0, 2.0], 1e-5);
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-6);
        let g = finite_diff_grad(|_| 7.0, &[1.0, 2.0, 3.0], 1e-5);
        assert!(g.iter().all(|&x| x == 0.0));
        let g = finite_diff_grad(|x| x[0] * x[1], &[3.0, 5.0], 1e-5);
        assert_abs_diff_eq!(g[0], 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(Rng::new(42).child(0).next_u64(), Rng::new(42).child(1).next_u64());
    }

    fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant((u, v) in vec_strategy(), alpha in 0.01f64..100.0) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            prop_assert!((-1.0..=1.0).contains(&c));
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() < 1e-12);
        }

        #[test]
        fn softmax_is_a_distribution(s in prop::collection::vec(-50.0f64..50.0, 1..10), tau in 0.01f64..10.0) {
            let p = softmax_t(&s, tau).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // ties in s keep the same lowest index in both
            prop_assert_eq!(argmax(&p), argmax(&s));
        }

        #[test]
        fn log_sum_exp_bounds_max(s in prop::collection::vec(-1e4f64..1e4, 1..10)) {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = log_sum_exp(&s).unwrap();
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (s.len() as f64).ln() + 1e-9);
        }
    }
}
