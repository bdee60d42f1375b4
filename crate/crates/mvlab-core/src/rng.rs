//! Deterministic random-number streams.
//!
//! Every source of randomness is a ChaCha8 generator keyed by a master
//! seed, with independent substreams selected through the ChaCha stream
//! field. The derivation is `ChaCha8Rng::seed_from_u64(master)` followed
//! by `set_stream(tag)`, so identical seeds reproduce identical values on
//! any platform.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Substream tags used by the trainer.
pub const TAG_INIT: u64 = 0;
pub const TAG_SPLIT: u64 = 1;
pub const TAG_BATCH_ORDER: u64 = 2;
pub const TAG_NOISE: u64 = 3;

/// Substream tags used by the synthetic generator.
pub const TAG_LATENT_SHARED: u64 = 10;
pub const TAG_LATENT_PRIVATE_1: u64 = 11;
pub const TAG_LATENT_PRIVATE_2: u64 = 12;
/// Feature j of the synthetic generator draws from stream `TAG_FEATURE_BASE + j`.
pub const TAG_FEATURE_BASE: u64 = 1000;

/// Open a substream of `master` identified by `tag`.
pub fn stream(master: u64, tag: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag);
    rng
}

/// The four named streams a training run consumes.
pub struct SeedStreams {
    pub init: Stream,
    pub split: Stream,
    pub batch_order: Stream,
    pub noise: Stream,
}

/// Derive the independent (init, split, minibatch order, noise) streams.
pub fn seed_streams(master: u64) -> SeedStreams {
    SeedStreams {
        init: stream(master, TAG_INIT),
        split: stream(master, TAG_SPLIT),
        batch_order: stream(master, TAG_BATCH_ORDER),
        noise: stream(master, TAG_NOISE),
    }
}

/// Draw `len` standard-normal values.
pub fn normal_vec(rng: &mut Stream, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fisher–Yates shuffle driven by the given stream.
pub fn shuffle(rng: &mut Stream, xs: &mut [usize]) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}

/// Mix auxiliary indices into a master seed to derive per-cell seeds.
///
/// SplitMix64 finalizer applied over (seed, parts); stable across platforms.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = master;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
