//! Derivation of independent RNG streams from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer of `root` mixed with `stream`.
pub fn derive(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(root: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream))
}

/// Stream tags, so unrelated consumers of one root seed never collide.
pub mod streams {
    pub const TERRAIN: u64 = 1;
    pub const DRIFT: u64 = 2;
    pub const CLOUDS: u64 = 3;
    pub const SPECKLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const TEST_SPLIT: u64 = 6;
    pub const CONVLSTM: u64 = 7;
    pub const CGAN: u64 = 8;
    pub const HEAD: u64 = 9;
    pub const SHUFFLE: u64 = 10;
}
