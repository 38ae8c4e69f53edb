//! Seeded random streams.
//!
//! Every consumer of randomness (channel noise, phase walk, parameter
//! sampling, weight init, payload bits) draws from its own ChaCha20 stream
//! keyed by the master seed. Changing how many numbers one stream consumes
//! never shifts another stream, and every stream position can be saved and
//! restored exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Noise = 1,
    Phase = 2,
    Params = 3,
    Init = 4,
    Bits = 5,
}

impl Stream {
    pub const ALL: [Stream; 5] = [
        Stream::Noise,
        Stream::Phase,
        Stream::Params,
        Stream::Init,
        Stream::Bits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Noise => "noise",
            Stream::Phase => "phase",
            Stream::Params => "params",
            Stream::Init => "init",
            Stream::Bits => "bits",
        }
    }
}

/// Position of every stream, enough to resume bit-identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub seed: u64,
    pub word_pos: [u128; 5],
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    streams: [ChaCha20Rng; 5],
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let streams = Stream::ALL.map(|s| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            rng
        });
        Self { seed, streams }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&mut self, stream: Stream) -> &mut ChaCha20Rng {
        &mut self.streams[stream as usize - 1]
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            seed: self.seed,
            word_pos: std::array::from_fn(|i| self.streams[i].get_word_pos()),
        }
    }

    pub fn restore(state: &StreamState) -> Self {
        let mut out = Self::new(state.seed);
        for (rng, &pos) in out.streams.iter_mut().zip(&state.word_pos) {
            rng.set_word_pos(pos);
        }
        out
    }

    /// Independent streams for the `index`-th job of a sweep rooted at `seed`.
    pub fn for_job(seed: u64, index: u64) -> Self {
        Self::new(derive_seed(seed, index))
    }
}

/// SplitMix64 finalizer over (seed, index).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_of_each_others_consumption() {
        let mut a = RngStreams::new(7);
        let mut b = RngStreams::new(7);
        for _ in 0..1000 {
            let _: f64 = a.get(Stream::Noise).random();
        }
        let x: u64 = a.get(Stream::Phase).random();
        let y: u64 = b.get(Stream::Phase).random();
        assert_eq!(x, y);
    }

    #[test]
    fn state_restore_resumes_exactly() {
        let mut a = RngStreams::new(11);
        for s in Stream::ALL {
            for _ in 0..37 {
                let _: f64 = normal(a.get(s));
            }
        }
        let snap = a.state();
        let mut b = RngStreams::restore(&snap);
        for s in Stream::ALL {
            let x: u64 = a.get(s).random();
            let y: u64 = b.get(s).random();
            assert_eq!(x, y, "stream {}", s.name());
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..64).map(|i| derive_seed(1, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
    }
}
