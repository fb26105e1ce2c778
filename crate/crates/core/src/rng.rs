//! Splittable, counter-based random streams.
//!
//! Every stream is identified by a 64-bit key. Children are derived from the
//! parent's key alone, never from how much of the parent has been consumed, so
//! the stream handed to rollout `i` is the same no matter which worker runs it.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct RandomStream {
    key: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        let key = mix64(seed.wrapping_add(GOLDEN_GAMMA));
        Self {
            key,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Independent child stream number `index`.
    pub fn substream(&self, index: u64) -> RandomStream {
        let key = mix64(self.key ^ mix64(index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1)));
        Self {
            key,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for z in out {
            *z = StandardNormal.sample(&mut self.rng);
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_ignore_parent_consumption() {
        let root = RandomStream::new(7);
        let mut used = root.clone();
        for _ in 0..100 {
            used.normal();
        }
        let mut a = root.substream(3);
        let mut b = used.substream(3);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn distinct_indices_give_distinct_streams() {
        let root = RandomStream::new(0);
        let firsts: Vec<u64> = (0..64).map(|i| root.substream(i).next_u64()).collect();
        let mut sorted = firsts.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), firsts.len());
        assert_ne!(RandomStream::new(1).key(), RandomStream::new(2).key());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RandomStream::new(11);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
