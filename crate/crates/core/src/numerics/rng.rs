use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Array;

/// Seeded generator backed by ChaCha8 (`rand_chacha`).
///
/// ChaCha8 output depends only on the seed, so streams are identical across
/// platforms. Gaussian draws use the ziggurat sampler from `rand_distr`.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn bool(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    pub fn normal_array(&mut self, shape: &[usize]) -> Array {
        let len = shape.iter().product();
        Array::from_vec(shape, self.normal_vec(len)).expect("valid shape")
    }

    pub fn uniform_array(&mut self, shape: &[usize], lo: f64, hi: f64) -> Array {
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.uniform_range(lo, hi)).collect();
        Array::from_vec(shape, data).expect("valid shape")
    }

    /// Random unit vector in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.normal_vec(dim);
            let n = super::norm2(&v);
            if n > 1e-6 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.int_range(0, i);
            p.swap(i, j);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        assert_ne!(a.uniform(), b.uniform());
    }

    #[test]
    fn permutation_is_bijective() {
        let mut rng = Rng::new(5);
        let mut p = rng.permutation(17);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
