//! Seed derivation.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream keyed on
//! `(global seed, device offset, round, purpose)`. Streams for different
//! devices never share state, so per-device work can run in any order (or in
//! parallel) and still produce identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Keeps two draws with the same
/// `(seed, device, round)` key independent of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    LinkRate = 1,
    LocalTrain = 2,
    RandomSelect = 3,
    DataGen = 4,
    Partition = 5,
    ModelInit = 6,
    Fleet = 7,
    Split = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key components into one 64-bit seed.
pub fn derive_seed(seed: u64, offset: u64, round: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ offset);
    h = splitmix64(h ^ round);
    splitmix64(h ^ purpose as u64)
}

pub fn stream(seed: u64, offset: u64, round: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, offset, round, purpose))
}
