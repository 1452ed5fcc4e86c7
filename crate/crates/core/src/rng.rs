//! Deterministic random streams derived from `(seed, stream, index)`.
//!
//! Every consumer draws from its own stream, so the data order does not
//! depend on how many numbers model initialization consumed, and a resumed
//! run only needs the step counter to rebuild its generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Named consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Batch = 3,
    Target = 4,
    Penalty = 5,
    Condition = 6,
    Classifier = 7,
    Eval = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: Stream, index: u64) -> Rng {
    let key = splitmix(splitmix(seed ^ splitmix(stream as u64)) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rand::Rng::random::<f64>(rng)
}

pub fn below(rng: &mut Rng, n: usize) -> usize {
    rand::Rng::random_range(rng, 0..n)
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    rand::seq::SliceRandom::shuffle(items, rng);
}
