//! Seeded random streams.
//!
//! Every consumer of randomness (a vehicle, an agent's local update in a given
//! epoch, a partitioner) draws from its own stream derived from the run seed
//! plus a domain tag and integer ids. Streams never share state, so the
//! order in which independent work is scheduled cannot change the results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams for different purposes apart even when the
/// integer ids coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Dataset = 1,
    Partition = 2,
    ModelInit = 3,
    Vehicle = 4,
    Placement = 5,
    LocalUpdate = 6,
    EvalSubsample = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the seed, domain and ids into a single 64-bit stream key.
pub fn stream_key(seed: u64, domain: Domain, ids: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(domain as u64));
    for &id in ids {
        h = splitmix64(h ^ splitmix64(id.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

pub fn stream(seed: u64, domain: Domain, ids: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_key(seed, domain, ids))
}
