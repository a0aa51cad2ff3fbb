//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(root seed, purpose tag, item index)`. The ChaCha key is derived from the
//! seed and tag; the item index selects the ChaCha stream id, so two items
//! never share keystream and the output does not depend on the order in which
//! items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stream for item `index` of purpose `tag` under `seed`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ fnv1a64(tag.as_bytes()).rotate_left(17));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Stream for a two-level item address such as `(row, sample)`.
pub fn stream2(seed: u64, tag: &str, outer: u64, inner: u64) -> StreamRng {
    stream(seed, tag, splitmix64(outer.wrapping_mul(0xD134_2543_DE82_EF95)) ^ inner)
}

/// Derive a child seed, used when one run spawns sub-runs (e.g. per sweep entry).
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a64(tag.as_bytes())) ^ index)
}
