//! Canonical deterministic random stream.
//!
//! Every stochastic operation draws from [`CanonicalRng`], the 128-bit
//! multiplicative PCG generator `MCG XSL RR 128/64` (`pcg64_fast` in the PCG
//! reference implementation). The 128-bit state is built from a 64-bit seed
//! with two SplitMix64 outputs:
//!
//! ```text
//! lo = splitmix64(seed) ; hi = splitmix64(seed + 0x9E3779B97F4A7C15)
//! state = (hi << 64 | lo) | 1
//! ```
//!
//! Derived values:
//!
//! * `uniform01 = (next_u64 >> 11) * 2^-53`, in `[0, 1)`
//! * `standard_normal` uses the Box-Muller cosine branch with
//!   `u1 = 1 - uniform01`, `u2 = uniform01`, i.e. two draws per normal.
//! * `derive_seed(seed, index)` is the first 8 bytes (little-endian) of
//!   `SHA-256(seed.to_le_bytes() || index.to_le_bytes())`.

use rand_core::Rng;
use rand_pcg::Pcg64Mcg;
use sha2::{Digest, Sha256};

pub type CanonicalRng = Pcg64Mcg;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> CanonicalRng {
    let lo = splitmix64(seed);
    let hi = splitmix64(seed.wrapping_add(GOLDEN_GAMMA));
    Pcg64Mcg::new((u128::from(hi) << 64) | u128::from(lo))
}

/// Order-independent per-item seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

pub fn uniform01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
