//! Deterministic random streams.
//!
//! Every consumer draws from a ChaCha8 stream addressed by `(seed, stream)`.
//! ChaCha is counter based, so distinct stream ids give independent sequences
//! and a replicate's draws do not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Stream id namespaces, so that e.g. dataset sampling and trajectory noise
/// with the same seed never share a sequence.
pub mod domain {
    pub const EMBEDDING: u64 = 1 << 56;
    pub const DATASET: u64 = 2 << 56;
    pub const FORWARD: u64 = 3 << 56;
    pub const TRAJECTORY: u64 = 4 << 56;
    pub const CLONE: u64 = 5 << 56;
    pub const REDUCED: u64 = 6 << 56;
    pub const EXPERIMENT: u64 = 7 << 56;
}

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
