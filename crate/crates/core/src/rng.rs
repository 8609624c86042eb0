//! Seed derivation and deterministic random sources.
//!
//! All randomness in a run flows from a single root seed. Subsystems derive
//! their own streams by hashing a textual label into the root seed, so adding
//! a consumer never shifts another consumer's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; stable across platforms and releases.
fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a subsystem seed from the root seed and a label such as
/// `"metapath/node/17"`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = mix(root ^ 0x9e37_79b9_7f4a_7c15);
    for &b in label.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str) -> ChaCha8Rng {
    seeded_rng(derive_seed(root, label))
}

/// Draw `n` i.i.d. standard normal values.
pub fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
