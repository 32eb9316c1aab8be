//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by a
//! [`StreamKey`]. ChaCha is counter-based: the 256-bit key is expanded from
//! `(seed, domain)` with SplitMix64, and the 64-bit stream id packs
//! `(trial, stratum)` as `trial << 32 | stratum`. A stream therefore depends
//! only on its key, never on how many other streams were consumed before it
//! or on which thread consumed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all sampling.
pub type StreamRng = ChaCha8Rng;

/// Separates independent uses of one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Naive = 1,
    Stratified = 2,
    Antithetic = 3,
    ModelInit = 4,
    Augment = 5,
    Mined = 6,
    Probe = 7,
    QuadraticNoise = 8,
    Synthetic = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub trial: u64,
    pub stratum: u64,
}

impl StreamKey {
    pub fn new(seed: u64, domain: Domain) -> Self {
        StreamKey {
            seed,
            domain,
            trial: 0,
            stratum: 0,
        }
    }

    pub fn trial(mut self, trial: u64) -> Self {
        self.trial = trial;
        self
    }

    pub fn stratum(mut self, stratum: u64) -> Self {
        self.stratum = stratum;
        self
    }

    pub fn rng(&self) -> StreamRng {
        assert!(self.trial < 1 << 32, "trial id exceeds 32 bits");
        assert!(self.stratum < 1 << 32, "stratum id exceeds 32 bits");
        let mut state = self.seed ^ (self.domain as u64).wrapping_mul(0xA24B_AED4_963E_E407);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.trial << 32 | self.stratum);
        rng
    }
}

/// One step of SplitMix64.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
