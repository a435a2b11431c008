//! Deterministic seed derivation. Every stochastic stage takes its seed from
//! a master seed mixed with a stage name, so stages reproduce independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Combines two values into a well-mixed seed.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17) ^ 0xD6E8_FEB8_6659_FD93)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Seed for a named stage (`"gen"`, `"train"`, ...) under `master`.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    mix(master, fnv1a(stage))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_differ() {
        assert_ne!(stage_seed(1, "gen"), stage_seed(1, "train"));
        assert_ne!(stage_seed(1, "gen"), stage_seed(2, "gen"));
        assert_eq!(stage_seed(7, "eval"), stage_seed(7, "eval"));
    }
}
