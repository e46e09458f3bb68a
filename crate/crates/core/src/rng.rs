//! Seed derivation.
//!
//! Every random phase draws from its own ChaCha8 stream keyed by the run
//! seed, so adding draws to one phase never perturbs another. Replicate
//! seeds are derived with [`mix_seed`] (a splitmix64 finalizer over
//! `seed ^ index`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the independent random phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Degrees = 1,
    Attachments = 2,
    Weights = 3,
    Ratios = 4,
    Sectors = 5,
    Trim = 16,
    Ensemble = 32,
    Shocks = 48,
    Panel = 64,
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate (or sample) `index` of a run seeded with `seed`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index)
}

/// Generator for one phase of a seeded computation.
pub fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64);
    rng
}
