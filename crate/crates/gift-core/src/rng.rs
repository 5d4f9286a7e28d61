//! Deterministic stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream seeded through
//! [`sub_rng`], so a run is a pure function of the master seed no matter how
//! work is split across rollout workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent named stream from a master seed.
///
/// `label` separates purposes (env resets, minibatch shuffling, ...);
/// `index` separates parallel items within a purpose.
pub fn sub_rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = mix(master);
    for b in label.bytes() {
        h = mix(h ^ u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(mix(h ^ index))
}
