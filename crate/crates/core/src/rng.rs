//! Counter-keyed seeding so every random stream is a pure function of its
//! coordinates (seed, epoch, batch, ...), independent of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of coordinates into one 64-bit key.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5EED_u64, |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn keyed(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(keys))
}
