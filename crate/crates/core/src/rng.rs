//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a root seed and a stream name, so components can be re-run
//! independently and still agree with a full pipeline run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of the named substream of `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    splitmix64(splitmix64(root) ^ fnv1a(name))
}

/// Seed of the `index`-th item of a named substream.
pub fn substream_item(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(substream(root, name).wrapping_add(splitmix64(index)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
