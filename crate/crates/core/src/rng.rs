//! Seeded, splittable random streams.
//!
//! Every consumer derives its own ChaCha stream from a root seed plus a
//! `(domain, a, b)` key, so no generator state is ever shared between samples,
//! epochs or threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream domains keep unrelated consumers of the same seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Augment = 1,
    Shuffle = 2,
    Split = 3,
    Init = 4,
    Glyph = 5,
    Distort = 6,
    Probe = 7,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, domain, a, b)`.
pub fn substream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(domain as u64)));
    rng.set_stream(mix(a).wrapping_add(mix(b ^ 0x5851_f42d_4c95_7f2d)));
    rng
}

/// Uniform draw on the closed interval `[lo, hi]`; a degenerate interval
/// returns `lo` without consuming randomness.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    let u: f64 = rng.gen::<f64>();
    (lo + (hi - lo) * u).clamp(lo, hi)
}
