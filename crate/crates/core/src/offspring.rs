//! Offspring distributions with finite support, plain and size-biased
//! sampling.
//!
//! The standing hypothesis `p_1 = 0` is enforced at construction: a law with
//! single-child mass cannot be distinguished from a rate change along the
//! branch, so such events must be absorbed into the motion (see the aging
//! model in [`crate::models`] for the one place where this rewrite is done).

use crate::error::SimError;
use crate::Result;
use rand::Rng;

/// A finite-support offspring law `(p_k)` with mean `m` and variance `var`.
///
/// Immutable after construction and safe to share across replicas.
#[derive(Clone, Debug)]
pub struct OffspringDistribution {
    /// `(k, p_k)` pairs, sorted by `k`, zero-mass entries removed.
    support: Vec<(u32, f64)>,
    m: f64,
    var: f64,
    /// Cumulative table for plain sampling.
    cum: Vec<f64>,
    /// Cumulative table for the size-biased law `k p_k / m` (empty if m = 0).
    cum_size_biased: Vec<f64>,
}

impl OffspringDistribution {
    /// Validate and normalize raw `(k, weight)` pairs.
    pub fn validate(raw: &[(u32, f64)]) -> Result<Self> {
        if raw.is_empty() {
            return Err(SimError::EmptySupport);
        }
        let mut pairs: Vec<(u32, f64)> = Vec::new();
        for &(k, w) in raw {
            if w < 0.0 || !w.is_finite() {
                return Err(SimError::NegativeWeight { k, weight: w });
            }
            if w > 0.0 {
                match pairs.iter_mut().find(|(kk, _)| *kk == k) {
                    Some((_, acc)) => *acc += w,
                    None => pairs.push((k, w)),
                }
            }
        }
        if pairs.is_empty() {
            return Err(SimError::EmptySupport);
        }
        pairs.sort_by_key(|&(k, _)| k);
        if pairs.iter().any(|&(k, w)| k == 1 && w > 0.0) {
            return Err(SimError::PositiveP1);
        }
        let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
        for (_, w) in pairs.iter_mut() {
            *w /= total;
        }
        let m: f64 = pairs.iter().map(|&(k, p)| f64::from(k) * p).sum();
        let var: f64 = pairs
            .iter()
            .map(|&(k, p)| (f64::from(k) - m).powi(2) * p)
            .sum();

        let mut cum = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for &(_, p) in &pairs {
            acc += p;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;

        let mut cum_size_biased = Vec::new();
        if m > 0.0 {
            let mut acc = 0.0;
            for &(k, p) in &pairs {
                acc += f64::from(k) * p / m;
                cum_size_biased.push(acc);
            }
            let last = *cum_size_biased.last().unwrap();
            debug_assert!((last - 1.0).abs() < 1e-12, "size-biased weights sum to 1");
            *cum_size_biased.last_mut().unwrap() = 1.0;
        }

        Ok(OffspringDistribution {
            support: pairs,
            m,
            var,
            cum,
            cum_size_biased,
        })
    }

    /// Convenience constructor for the binary law `p_2 = 1`.
    pub fn yule() -> Self {
        Self::validate(&[(2, 1.0)]).unwrap()
    }

    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    /// Mean offspring number `m`.
    pub fn mean(&self) -> f64 {
        self.m
    }

    /// Offspring variance.
    pub fn variance(&self) -> f64 {
        self.var
    }

    /// Probability of a given offspring count.
    pub fn prob(&self, k: u32) -> f64 {
        self.support
            .iter()
            .find(|&&(kk, _)| kk == k)
            .map_or(0.0, |&(_, p)| p)
    }

    /// `sum_k k (k-1) p_k`, the normalizer of the fork operator `J2`.
    pub fn pair_factor(&self) -> f64 {
        self.support
            .iter()
            .map(|&(k, p)| f64::from(k) * (f64::from(k) - 1.0) * p)
            .sum()
    }

    /// Mean of the size-biased law, `sum_k k^2 p_k / m`.
    pub fn size_biased_mean(&self) -> Result<f64> {
        if self.m <= 0.0 {
            return Err(SimError::ZeroMean);
        }
        Ok(self
            .support
            .iter()
            .map(|&(k, p)| f64::from(k) * f64::from(k) * p / self.m)
            .sum())
    }

    /// Largest supported offspring count.
    pub fn max_k(&self) -> u32 {
        self.support.last().map_or(0, |&(k, _)| k)
    }

    /// Whether some `k >= 2` has positive mass (forks can occur).
    pub fn has_pairs(&self) -> bool {
        self.support.iter().any(|&(k, p)| k >= 2 && p > 0.0)
    }

    /// Draw one offspring count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self.cum.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)].0
    }

    /// Draw from the size-biased law `h p_h / m`.
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        if self.m <= 0.0 {
            return Err(SimError::ZeroMean);
        }
        let u: f64 = rng.random();
        let idx = self.cum_size_biased.partition_point(|&c| c <= u);
        Ok(self.support[idx.min(self.support.len() - 1)].0)
    }

    /// Draw from the `(h-1)`-tilted size-biased law, `h (h-1) p_h / sum`.
    ///
    /// This is the pair law that appears in fork estimators; the normalizer
    /// is [`Self::pair_factor`].
    pub fn sample_pair_tilted<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        let c2 = self.pair_factor();
        if c2 <= 0.0 {
            return Err(SimError::DegeneratePairs);
        }
        let u: f64 = rng.random::<f64>() * c2;
        let mut acc = 0.0;
        for &(k, p) in &self.support {
            acc += f64::from(k) * (f64::from(k) - 1.0) * p;
            if u < acc {
                return Ok(k);
            }
        }
        Ok(self.support.last().unwrap().0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        StreamKey::replica(seed, 0).rng(Purpose::Estimate)
    }

    #[test]
    fn yule_law() {
        let d = OffspringDistribution::yule();
        assert_eq!(d.mean(), 2.0);
        assert_eq!(d.variance(), 0.0);
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut r), 2);
            assert_eq!(d.sample_size_biased(&mut r).unwrap(), 2);
        }
    }

    #[test]
    fn two_point_law_moments() {
        let d = OffspringDistribution::validate(&[(0, 0.25), (2, 0.75)]).unwrap();
        assert!((d.mean() - 1.5).abs() < 1e-12);
        assert!((d.variance() - 0.75).abs() < 1e-12);
        assert!((d.pair_factor() - 1.5).abs() < 1e-12);
        // size-biased law puts all mass on 2
        let mut r = rng(2);
        for _ in 0..50 {
            assert_eq!(d.sample_size_biased(&mut r).unwrap(), 2);
        }
    }

    #[test]
    fn positive_p1_rejected() {
        let err = OffspringDistribution::validate(&[(1, 0.5), (2, 0.5)]).unwrap_err();
        assert!(matches!(err, SimError::PositiveP1));
    }

    #[test]
    fn empty_and_negative_rejected() {
        assert!(matches!(
            OffspringDistribution::validate(&[]),
            Err(SimError::EmptySupport)
        ));
        assert!(matches!(
            OffspringDistribution::validate(&[(0, 0.0), (2, 0.0)]),
            Err(SimError::EmptySupport)
        ));
        assert!(matches!(
            OffspringDistribution::validate(&[(2, -1.0)]),
            Err(SimError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn weights_are_normalized() {
        let d = OffspringDistribution::validate(&[(0, 1.0), (2, 3.0)]).unwrap();
        assert!((d.prob(0) - 0.25).abs() < 1e-12);
        assert!((d.prob(2) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn sampling_frequency_matches_law() {
        let d = OffspringDistribution::validate(&[(0, 0.25), (2, 0.75)]).unwrap();
        let mut r = rng(3);
        let n = 1_000_000;
        let mut twos = 0u64;
        for _ in 0..n {
            if d.sample(&mut r) == 2 {
                twos += 1;
            }
        }
        let freq = twos as f64 / n as f64;
        let se = (0.75 * 0.25 / n as f64).sqrt();
        assert!(
            (freq - 0.75).abs() < 4.0 * se,
            "freq {freq} out of band (se {se})"
        );
    }

    #[test]
    fn size_biased_frequency_matches_law() {
        // weights: 2*0.5 and 3*0.5 over m = 2.5 -> P(3) = 0.6
        let d = OffspringDistribution::validate(&[(2, 0.5), (3, 0.5)]).unwrap();
        let mut r = rng(4);
        let n = 1_000_000;
        let mut threes = 0u64;
        for _ in 0..n {
            if d.sample_size_biased(&mut r).unwrap() == 3 {
                threes += 1;
            }
        }
        let freq = threes as f64 / n as f64;
        let se = (0.6 * 0.4 / n as f64).sqrt();
        assert!((freq - 0.6).abs() < 4.0 * se);
    }

    #[test]
    fn empirical_means_converge() {
        let d = OffspringDistribution::validate(&[(0, 0.2), (2, 0.5), (4, 0.3)]).unwrap();
        let mut r = rng(5);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sb = 0.0;
        for _ in 0..n {
            sum += f64::from(d.sample(&mut r));
            sum_sb += f64::from(d.sample_size_biased(&mut r).unwrap());
        }
        let mean = sum / n as f64;
        let sd = d.variance().sqrt();
        assert!((mean - d.mean()).abs() < 5.0 * sd / (n as f64).sqrt());
        let sb_mean = sum_sb / n as f64;
        let target = d.size_biased_mean().unwrap();
        // crude 5-se band with the size-biased second moment
        let sb_var: f64 = d
            .support()
            .iter()
            .map(|&(k, p)| f64::from(k) * p / d.mean() * (f64::from(k) - target).powi(2))
            .sum();
        assert!((sb_mean - target).abs() < 5.0 * (sb_var / n as f64).sqrt());
    }

    #[test]
    fn cloned_streams_reproduce_draws() {
        let d = OffspringDistribution::validate(&[(0, 0.3), (2, 0.4), (3, 0.3)]).unwrap();
        let mut a = rng(6);
        let mut b = a.clone();
        let xs: Vec<u32> = (0..64).map(|_| d.sample(&mut a)).collect();
        let ys: Vec<u32> = (0..64).map(|_| d.sample(&mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn pair_tilted_law() {
        // k(k-1)p_k: k=2 -> 2*0.5=1, k=3 -> 6*0.5=3; P(3) = 0.75
        let d = OffspringDistribution::validate(&[(2, 0.5), (3, 0.5)]).unwrap();
        let mut r = rng(7);
        let n = 200_000;
        let mut threes = 0u64;
        for _ in 0..n {
            if d.sample_pair_tilted(&mut r).unwrap() == 3 {
                threes += 1;
            }
        }
        let freq = threes as f64 / n as f64;
        let se = (0.75 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() < 4.0 * se);
    }
}
