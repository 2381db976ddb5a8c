//! Seed derivation.
//!
//! Every stochastic stage gets its own ChaCha stream whose seed is a pure
//! function of the master seed and a path of stream labels, so results do not
//! depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const REPLICATE: u64 = 0x7265_706c;
    pub const DATA: u64 = 0x6461_7461;
    pub const PARTITION: u64 = 0x7061_7274;
    pub const CONSTRUCT: u64 = 0x636f_6e73;
    pub const SCORE: u64 = 0x7363_6f72;
    pub const SELECT: u64 = 0x7365_6c65;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const CONJECTURE: u64 = 0x636f_6e6a;
    pub const OPTIMIZE: u64 = 0x6f70_7469;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from `master` and a path of labels.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

/// Stream label for a name, e.g. a method name.
pub fn label(name: &str) -> u64 {
    name.bytes().fold(splitmix64(name.len() as u64), |acc, b| splitmix64(acc ^ b as u64))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, path: &[u64]) -> Rng {
    rng_from(derive(master, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_path_sensitive() {
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(8, &[1]));
        assert_ne!(derive(7, &[]), derive(7, &[0]));
        assert_ne!(label("mirror"), label("max"));
        assert_eq!(label("max"), label("max"));
    }
}
