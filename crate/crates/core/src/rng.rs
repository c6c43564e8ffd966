//! Seeded random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Streams with the same
//! identity replay the same draws; different ids seed the Xoshiro256++ state
//! through a SplitMix64 hash of both values. Parallel workers never share a
//! stream: the coordinator hands each one a stream derived from a key such
//! as `(iteration, node)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Distribution, Gamma, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: Xoshiro256PlusPlus,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = splitmix64(seed) ^ splitmix64(stream_id.rotate_left(29) ^ 0xD1B5_4A32_D192_ED03);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            key = splitmix64(key);
            chunk.copy_from_slice(&key.to_le_bytes());
        }
        let inner = Xoshiro256PlusPlus::from_seed(bytes);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent stream keyed by `key`. The result depends only on
    /// this stream's identity and the key, never on how many draws were taken.
    pub fn derive(&self, key: &[u64]) -> RngStream {
        let mut h = splitmix64(self.stream_id ^ 0x5851_F42D_4C95_7F2D);
        for &k in key {
            h = splitmix64(h ^ splitmix64(k));
        }
        RngStream::new(self.seed, h)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    #[inline]
    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.standard_normal()
    }

    /// Draw from InvGamma(shape, scale), i.e. `scale / Gamma(shape, 1)`.
    pub fn inverse_gamma(&mut self, shape: f64, scale: f64) -> f64 {
        let g = Gamma::new(shape, 1.0).expect("inverse_gamma: shape must be positive");
        scale / g.sample(&mut self.inner)
    }
}

impl RngCore for RngStream {
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
