//! Lossy Counting (Manku and Motwani) for approximate per-key access counts.

use std::hash::Hash;

use thiserror::Error;

use crate::StableMap;

/// Default error fraction.
pub const DEFAULT_EPSILON: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("epsilon must lie in (0, 1), got {0}")]
pub struct EpsilonError(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    count: u64,
    max_error: u64,
}

#[derive(Debug, Clone)]
pub struct LossyCounter<K> {
    epsilon: f64,
    bucket_width: u64,
    total_seen: u64,
    entries: StableMap<K, Entry>,
}

impl<K: Hash + Eq + Clone> LossyCounter<K> {
    pub fn new(epsilon: f64) -> Result<Self, EpsilonError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(EpsilonError(epsilon));
        }
        Ok(Self { epsilon, bucket_width: (1.0 / epsilon).ceil() as u64, total_seen: 0, entries: StableMap::default() })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bucket_width(&self) -> u64 {
        self.bucket_width
    }

    pub fn total_seen(&self) -> u64 {
        self.total_seen
    }

    /// Bucket id of the most recent observation, `ceil(N / w)`.
    pub fn current_bucket(&self) -> u64 {
        self.total_seen.div_ceil(self.bucket_width)
    }

    pub fn tracked(&self) -> usize {
        self.entries.len()
    }

    /// Counts one access to `key` and returns its estimated count afterwards.
    ///
    /// The return value is taken before any pruning at the bucket boundary so a
    /// caller always sees at least 1.
    pub fn observe(&mut self, key: &K) -> u64 {
        self.total_seen += 1;
        let bucket = self.current_bucket();
        let entry = self
            .entries
            .entry(key.clone())
            .and_modify(|e| e.count += 1)
            .or_insert(Entry { count: 1, max_error: bucket - 1 });
        let count = entry.count;
        if self.total_seen.is_multiple_of(self.bucket_width) {
            self.entries.retain(|_, e| e.count + e.max_error > bucket);
        }
        count
    }

    /// Estimated count, 0 when untracked.
    pub fn estimate(&self, key: &K) -> u64 {
        self.entries.get(key).map_or(0, |e| e.count)
    }

    /// Upper bound on how far the estimate may lag the true count.
    pub fn max_error(&self, key: &K) -> Option<u64> {
        self.entries.get(key).map(|e| e.max_error)
    }

    /// Forgets `key` so its count restarts from zero.
    pub fn reset(&mut self, key: &K) {
        self.entries.remove(key);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, u64)> {
        self.entries.iter().map(|(k, e)| (k, e.count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn first_observation_is_one() {
        let mut c = LossyCounter::new(0.1).unwrap();
        assert_eq!(c.observe(&"a"), 1);
    }

    #[test]
    fn heavy_key_is_exact() {
        let mut c = LossyCounter::new(0.1).unwrap();
        let mut last = 0;
        for _ in 0..50 {
            last = c.observe(&"a");
        }
        assert_eq!(last, 50);
    }

    #[test]
    fn uniform_stream_within_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c = LossyCounter::new(0.01).unwrap();
        let mut exact: HashMap<u32, u64> = HashMap::new();
        for _ in 0..1000 {
            let k = rng.gen_range(0..500u32);
            c.observe(&k);
            *exact.entry(k).or_default() += 1;
        }
        for (k, &true_count) in &exact {
            let est = c.estimate(k);
            assert!(est <= true_count);
            assert!(true_count - est <= 10, "{k}: {est} vs {true_count}");
        }
    }

    #[test]
    fn reset_restarts_count() {
        let mut c = LossyCounter::new(0.1).unwrap();
        for _ in 0..5 {
            c.observe(&"a");
        }
        c.reset(&"a");
        assert_eq!(c.observe(&"a"), 1);
        c.reset(&"zzz");
        assert_eq!(c.tracked(), 1);
    }

    #[test]
    fn reset_key_does_not_affect_pruning_of_others() {
        let eps = 0.2;
        let mut with_reset = LossyCounter::new(eps).unwrap();
        let mut reference = LossyCounter::new(eps).unwrap();
        // "x" is observed then reset; the reference sees a neutral filler instead,
        // so both counters share N and the same history for every other key.
        let stream = ["a", "b", "a", "c", "b", "a", "d", "a", "e", "b", "a", "c"];
        with_reset.observe(&"x");
        with_reset.reset(&"x");
        reference.observe(&"filler");
        reference.reset(&"filler");
        for k in stream {
            with_reset.observe(&k);
            reference.observe(&k);
        }
        for k in ["a", "b", "c", "d", "e"] {
            assert_eq!(with_reset.estimate(&k), reference.estimate(&k), "{k}");
        }
        assert_eq!(with_reset.estimate(&"x"), 0);
    }

    #[test]
    fn integral_reciprocal_only_guarantees_strict_threshold() {
        // With w = 1/eps exactly, a key whose true count equals eps * N can be
        // pruned at a bucket boundary; keys strictly above eps * N never are.
        let mut c = LossyCounter::new(0.1).unwrap();
        c.observe(&0u32);
        for k in 1..10u32 {
            c.observe(&k);
        }
        assert_eq!(c.total_seen(), 10);
        assert_eq!(c.estimate(&0), 0);
    }

    #[test]
    fn rejects_bad_epsilon() {
        assert!(LossyCounter::<u32>::new(0.0).is_err());
        assert!(LossyCounter::<u32>::new(1.0).is_err());
    }

    proptest! {
        #[test]
        fn bounds_against_exact_counts(
            eps in 0.002..0.2f64,
            universe in 1u32..300,
            skew in 0.0..2.0f64,
            len in 0usize..3000,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = LossyCounter::new(eps).unwrap();
            let mut exact: HashMap<u32, u64> = HashMap::new();
            for _ in 0..len {
                // cheap skewed draw: power of a uniform
                let u: f64 = rng.gen();
                let k = ((u.powf(1.0 + skew * 3.0)) * universe as f64) as u32;
                c.observe(&k);
                *exact.entry(k).or_default() += 1;
            }
            let n = c.total_seen() as f64;
            for (k, &t) in &exact {
                let est = c.estimate(k);
                prop_assert!(est <= t);
                prop_assert!((t - est) as f64 <= eps * n);
                if (t as f64) > eps * n {
                    prop_assert!(c.max_error(k).is_some());
                }
            }
            for (k, _) in c.iter() {
                prop_assert!(c.max_error(k).unwrap() as f64 <= eps * n);
            }
        }
    }

    #[test]
    fn memory_stays_bounded_on_long_streams() {
        let eps = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = LossyCounter::new(eps).unwrap();
        let n = 200_000;
        for _ in 0..n {
            c.observe(&rng.gen_range(0..1_000_000u32));
        }
        let ceiling = (1.0 / eps) * ((eps * n as f64).ln() + 1.0) * 2.0;
        assert!((c.tracked() as f64) < ceiling, "{} tracked", c.tracked());
    }
}
