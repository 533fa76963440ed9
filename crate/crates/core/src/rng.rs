//! Seeded random streams.
//!
//! Every randomized operation takes an explicit `&mut R: Rng`. Parallel work
//! derives child streams from the parent in a fixed order, so results never
//! depend on scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// The stream type used throughout the crate and its binaries.
pub type DpRng = ChaCha12Rng;

pub fn seeded(seed: u64) -> DpRng {
    DpRng::seed_from_u64(seed)
}

/// Draws a fresh child stream from `parent`.
pub fn child<R: Rng + ?Sized>(parent: &mut R) -> DpRng {
    DpRng::seed_from_u64(parent.next_u64())
}

/// Deterministic seed for the `(a, b)`-th unit of work under `base`.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw from the open interval (0, 1).
pub(crate) fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
