//! Deterministic random streams.
//!
//! Every stochastic stage (initial design, MCMC chains, objective
//! simulations, fallback picks) draws from its own stream derived from the
//! campaign seed and a stage label. Streams carry no hidden state between
//! iterations, so a campaign restored from disk continues on exactly the
//! same trajectory as the original.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Labels for independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    Init = 1,
    Fit = 2,
    Fallback = 3,
    Objective = 4,
    FinalFit = 5,
    GroundTruth = 6,
    Chain = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stage label and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, stage: Stage, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stage as u64)) ^ splitmix64(index.wrapping_add(0x5851_F42D)))
}

pub fn stream(seed: u64, stage: Stage, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stage, index))
}
