//! Deterministic RNG streams keyed by tuples of integers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered tuple of integers into one seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

// Stream tags, so that distinct purposes never share a substream.
pub(crate) const TAG_INIT: u64 = 0x1;
pub(crate) const TAG_SAMPLE: u64 = 0x2;
pub(crate) const TAG_CLIENT: u64 = 0x3;
pub(crate) const TAG_BATCH: u64 = 0x4;
pub(crate) const TAG_PARTITION: u64 = 0x5;
pub(crate) const TAG_SHUFFLE: u64 = 0x6;
pub(crate) const TAG_SYNTH: u64 = 0x7;
pub(crate) const TAG_POOL: u64 = 0x8;
pub(crate) const TAG_DISTILL: u64 = 0x9;

/// Per-client, per-round stream seed used for local batch shuffling.
pub fn client_stream_seed(seed: u64, client: usize, round: usize) -> u64 {
    mix(&[TAG_CLIENT, seed, client as u64, round as u64])
}
