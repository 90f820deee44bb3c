//! Counter-style seed derivation.
//!
//! Every random quantity in the crate is a pure function of a master seed and
//! a tuple of indices, so results do not depend on evaluation order or on how
//! work is split between threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain tags keep the streams used for different purposes disjoint.
pub(crate) mod domain {
    pub const LATTICE: u64 = 0x4c41_5454;
    pub const BRIDGE: u64 = 0x4252_4944;
    pub const TAIL: u64 = 0x5441_494c;
    pub const INITIAL: u64 = 0x494e_4954;
    pub const TELESCOPE: u64 = 0x5445_4c45;
}

#[inline]
const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `master` together with `parts` into a new 64-bit seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// A ChaCha8 stream keyed by `master` and `parts`.
pub fn keyed_rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = derive_seed(master, parts);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One standard normal draw.
#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Isize indices folded into seeds (negative times never reach the RNG, but be total anyway).
#[inline]
pub(crate) fn idx(i: isize) -> u64 {
    i as u64
}
