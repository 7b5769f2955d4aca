//! Counter-based seed derivation.
//!
//! Every random decision in the toolkit draws from an RNG seeded by
//! `derive(global, parts)`, so results depend only on the identity of the item
//! being processed and never on processing order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A component mixed into a derived seed.
#[derive(Debug, Clone, Copy)]
pub enum Part<'a> {
    Int(u64),
    Str(&'a str),
}

impl From<u64> for Part<'_> {
    fn from(v: u64) -> Self {
        Part::Int(v)
    }
}

impl From<usize> for Part<'_> {
    fn from(v: usize) -> Self {
        Part::Int(v as u64)
    }
}

impl From<u32> for Part<'_> {
    fn from(v: u32) -> Self {
        Part::Int(v as u64)
    }
}

impl<'a> From<&'a str> for Part<'a> {
    fn from(v: &'a str) -> Self {
        Part::Str(v)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a, then finalized through the mixer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h ^ s.len() as u64)
}

/// Hash a global seed together with an ordered list of identifying parts.
pub fn derive(global: u64, parts: &[Part<'_>]) -> u64 {
    let mut h = mix64(global ^ 0x9e37_79b9_7f4a_7c15);
    for (i, part) in parts.iter().enumerate() {
        let v = match *part {
            Part::Int(v) => mix64(v.wrapping_add(0x632b_e59b_d9b4_e019)),
            Part::Str(s) => hash_str(s),
        };
        h = mix64(h.rotate_left(17) ^ v ^ (i as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    h
}

/// Portable, stream-stable RNG for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[macro_export]
#[doc(hidden)]
macro_rules! seed_of {
    ($global:expr $(, $part:expr)* $(,)?) => {
        $crate::seed::derive($global, &[$($crate::seed::Part::from($part)),*])
    };
}
