//! Seeded randomness shared by every module.
//!
//! All streams are ChaCha8 ([`rand_chacha::ChaCha8Rng`]) seeded through
//! `seed_from_u64`. Child seeds are derived with [`derive_seed`], a SplitMix64
//! fold over the parts, so the same (master seed, participant, target, trial)
//! tuple always yields the same stream regardless of generation order.
//! Gaussian samples use the Box-Muller transform on two uniform draws in
//! (0, 1], see [`gaussian`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `h = splitmix64(master)`, then `h = splitmix64(h ^ part)` for each part.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |h, &p| splitmix64(h ^ p))
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in (0, 1].
pub fn uniform_open0<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 53 random mantissa bits, shifted off zero.
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal sample via Box-Muller (cosine branch only).
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = uniform_open0(rng);
    let u2 = uniform_open0(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
