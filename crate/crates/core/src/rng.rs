//! Seedable, stream-addressed randomness.
//!
//! Every stochastic operation draws from a [`RandomSource`] identified by a
//! `(seed, stream)` pair. The ChaCha8 key of a stream is the SHA-256 digest of
//! a fixed domain tag, the little-endian seed and the UTF-8 stream label, so
//! streams are independent of one another and of the order in which they are
//! created. ChaCha8 output is platform independent.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"fedqp/random-source/v1";

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: String,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        let stream = stream.into();
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN_TAG);
        hasher.update(seed.to_le_bytes());
        hasher.update((stream.len() as u64).to_le_bytes());
        hasher.update(stream.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RandomSource {
            seed,
            stream,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// A fresh stream named `<this stream>/<label>` under the same seed.
    ///
    /// Does not consume anything from `self`.
    pub fn substream(&self, label: impl AsRef<str>) -> RandomSource {
        RandomSource::new(self.seed, format!("{}/{}", self.stream, label.as_ref()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }
}

impl RngCore for RandomSource {
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
