//! Seeded, splittable random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Two streams with the same pair
//! produce the same sequence; distinct `stream_id`s select disjoint ChaCha
//! keystreams for the same key, so they are independent for practical purposes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// The identity of a stream, enough to rebuild it from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub stream_id: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            id: StreamId { seed, stream_id },
            inner,
        }
    }

    pub fn from_id(id: StreamId) -> Self {
        Self::new(id.seed, id.stream_id)
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Derive a child stream for worker `k`. The child depends only on this
    /// stream's identity and `k`, not on how many draws were made so far.
    pub fn substream(&self, k: u64) -> RngStream {
        RngStream::new(self.id.seed, splitmix64(self.id.stream_id ^ splitmix64(k.wrapping_add(1))))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
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
