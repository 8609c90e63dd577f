//! Deterministic random-stream derivation.
//!
//! Every random decision in a run draws from its own ChaCha8 stream keyed by
//! `(run seed, purpose, generation, offspring index)`. Streams are derived
//! with a splitmix64 chain, so work can be scheduled across any number of
//! threads without changing what any consumer draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step: a cheap, well-mixed 64-bit permutation.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Stream purposes, each isolated from the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Population / weight initialization.
    Init,
    /// Per-generation batch sampling (per-epoch shuffling for gradient runs).
    Batch,
    /// Parent selection for crossover and mutation.
    Selection,
    /// Per-offspring crossover gene choices.
    Crossover,
    /// Per-offspring mutation noise.
    Mutation,
    /// Per-offspring mutation-strength self-adaptation.
    SigmaAdapt,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Batch => 2,
            Purpose::Selection => 3,
            Purpose::Crossover => 4,
            Purpose::Mutation => 5,
            Purpose::SigmaAdapt => 6,
        }
    }
}

/// Root of all randomness for one run (one repeat of an experiment).
#[derive(Debug, Clone, Copy)]
pub struct RunRng {
    run_seed: u64,
}

impl RunRng {
    pub fn new(run_seed: u64) -> Self {
        Self { run_seed }
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    /// Independent stream for `(purpose, generation, offspring index)`.
    /// Streams with any differing coordinate are decorrelated.
    pub fn stream(&self, purpose: Purpose, generation: u64, offspring: u64) -> ChaCha8Rng {
        let seed = mix(mix(mix(self.run_seed, purpose.tag()), generation), offspring);
        ChaCha8Rng::seed_from_u64(seed)
    }
}
