//! Seed derivation and noise generation.
//!
//! Every random quantity in the crate is a pure function of a `u64` master
//! seed plus a path of integer tags (experiment, box size, replica, ...).
//! Derivation uses splitmix64 steps, so replicas can run on any number of
//! threads and still reproduce bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag path.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Counter-based generator for one derived stream.
pub fn stream(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// A vector of i.i.d. standard normals, deterministic in the seed.
pub fn normal_vector(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}
