//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a master seed mixed with a stable key, so results never depend
//! on scheduling or on which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used inside the crate.
pub mod tag {
    pub const PERMUTATION: u64 = 0x7065_726d;
    pub const TRAIN_NOISE: u64 = 0x6e6f_6973;
    pub const VALIDATION_SPLIT: u64 = 0x7661_6c73;
    pub const VALIDATION_NOISE: u64 = 0x7661_6c6e;
    pub const INIT: u64 = 0x696e_6974;
    pub const DRAW: u64 = 0x6472_6177;
    pub const COVARIATES: u64 = 0x636f_7661;
    pub const DATA: u64 = 0x6461_7461;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash-combine a master seed with a key path.
pub fn derive_seed(master: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(master: u64, key: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, key))
}
