use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::NumericsError;

/// Seeded, splittable random stream.
///
/// Every random draw in the crate goes through this type. A `(seed, stream)`
/// pair fully determines the sequence, independent of platform and of how
/// work is scheduled across threads.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream, keyed by `key`. Does not advance `self`.
    pub fn substream(&self, key: u64) -> Rng {
        Rng::new(mix_seed(self.seed, self.stream), key)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Student t with 3 degrees of freedom, as N(0,1) / sqrt(chi2_3 / 3).
    pub fn t3(&mut self) -> f64 {
        let numerator = self.standard_normal();
        let chi2: f64 = (0..3).map(|_| self.standard_normal().powi(2)).sum();
        numerator / (chi2 / 3.0).sqrt()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn uniform_permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        self.shuffle(&mut perm);
        perm
    }

    /// `k` distinct indices from `0..n`, sorted ascending.
    pub fn choose_without_replacement(
        &mut self,
        n: usize,
        k: usize,
    ) -> Result<Vec<usize>, NumericsError> {
        if k > n {
            return Err(NumericsError::SampleTooLarge { n, k });
        }
        let mut pool: Vec<usize> = (0..n).collect();
        self.partial_shuffle(&mut pool, k);
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        Ok(chosen)
    }

    /// Partial Fisher-Yates: afterwards `items[..k]` is a uniform k-subset
    /// of the original contents in uniform random order.
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], k: usize) {
        let n = items.len();
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer over two words; used to derive seeds from keys.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
