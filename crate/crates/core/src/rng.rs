//! Seeded random streams.
//!
//! Every random draw comes from a ChaCha8 generator seeded with the user seed
//! and placed on a stream numbered `replicate * 16 + purpose`, so replicates
//! and purposes never share a keystream and results do not depend on the
//! order or thread in which replicates run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Simulate = 1,
    Bootstrap = 2,
}

pub fn stream(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate.wrapping_mul(16).wrapping_add(purpose as u64));
    rng
}
