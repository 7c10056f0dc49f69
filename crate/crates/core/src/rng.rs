//! Seed derivation.
//!
//! Every random stream in a run is derived from the experiment seed plus a
//! purpose tag and a few indices, so the stream a client sees in round `t`
//! does not depend on scheduling or on which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = mix(seed);
    for b in tag.bytes() {
        h = mix(h ^ u64::from(b));
    }
    for &i in indices {
        h = mix(h ^ i);
    }
    h
}

pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, tag, indices))
}
