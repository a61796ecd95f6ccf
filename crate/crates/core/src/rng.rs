//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator. The 256-bit key is the SplitMix64
//! expansion of `base_seed ^ purpose.tag()`, and the ChaCha stream id is the
//! replica index. Replica `r` therefore always sees the same numbers no
//! matter how many other replicas are run, and streams for different
//! purposes never overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Each purpose gets an independent key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    SpeciesA,
    SpeciesB,
    Analysis,
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x1717_0000_0000_0001,
            Purpose::SpeciesA => 0x1717_0000_0000_00a0,
            Purpose::SpeciesB => 0x1717_0000_0000_00b0,
            Purpose::Analysis => 0x1717_0000_0000_0c00,
            Purpose::Custom(x) => 0x2929_0000_0000_0000 ^ x,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the generator for `(base_seed, replica, purpose)`.
pub fn stream(base_seed: u64, replica: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut state = base_seed ^ purpose.tag();
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}

/// Uniform on (0, 1].
#[inline]
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Exponential variate with the given rate, by inverse CDF.
#[inline]
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -libm::log(open_uniform(rng)) / rate
}
