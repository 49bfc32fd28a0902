//! Seed derivation for deterministic, independent random streams.
//!
//! Every random draw in the simulator comes from a stream derived from a root
//! seed plus a path of integer tags (client id, task index, round index, and
//! so on). Streams with different paths are statistically independent, and
//! the same path always yields the same stream, no matter what ran before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer; a cheap, well-mixed 64-bit permutation.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tag path into a root seed, producing a new 64-bit seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = mix(root ^ GOLDEN);
    for &tag in tags {
        state = mix(state.wrapping_add(GOLDEN) ^ mix(tag));
    }
    state
}

/// Builds a ChaCha8 stream keyed by the root seed and tag path.
pub fn derive_rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(root, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = mix(state.wrapping_add(GOLDEN));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream labels. Using distinct constants per purpose keeps streams from
/// colliding when they share the same numeric context (say, client 3 task 1).
pub mod tags {
    pub const DATA_GEN: u64 = 1;
    pub const HOLDOUT: u64 = 2;
    pub const CLIENT_ALLOC: u64 = 3;
    pub const TASK_POOL: u64 = 4;
    pub const TEST_POOL: u64 = 5;
    pub const SCHEDULE: u64 = 6;
    pub const MODEL_INIT: u64 = 7;
    pub const CLIENT_SEED: u64 = 8;
    pub const TRAIN: u64 = 9;
    pub const BUFFER: u64 = 10;
    pub const DATASET_SEED: u64 = 11;
    pub const PARTITION_SEED: u64 = 12;
    pub const MEANS: u64 = 13;
    pub const TEST_TASKS: u64 = 14;
}
