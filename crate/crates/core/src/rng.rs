//! Seed discipline.
//!
//! A run has one master seed. Every consumer of randomness (environment resets,
//! action selection, replay sampling, update-time policy draws, network
//! initialization, each ensemble member, evaluation, model rollouts) gets its own
//! stream whose seed is `derive_seed(master, label, index)`. Streams never share
//! state, so adding draws to one consumer cannot shift another one.
//!
//! `derive_seed` hashes the label with 64-bit FNV-1a, then mixes the master seed,
//! the label hash and the index through two rounds of the SplitMix64 finalizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let h = splitmix(master ^ fnv1a(label.as_bytes()));
    splitmix(h ^ splitmix(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, label: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, label, index))
}
