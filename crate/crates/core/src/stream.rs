//! Counter-based random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the master
//! seed and a purpose tag, with the ChaCha stream id taken from
//! `(round, client)`. Streams therefore depend only on that tuple and never on
//! which worker consumes them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Problem synthesis (curvatures, offsets, features).
    Problem,
    /// B-batch initialization of momentum and control variates.
    Init,
    /// Samples drawn during local steps.
    Local,
    /// Cohort selection.
    Cohort,
    /// Auxiliary Monte Carlo draws in validation code.
    Audit,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Problem => 0x5052_4f42,
            Purpose::Init => 0x494e_4954,
            Purpose::Local => 0x4c4f_4341,
            Purpose::Cohort => 0x434f_484f,
            Purpose::Audit => 0x4155_4449,
        }
    }
}

/// Deterministic stream for `(master_seed, round, client, purpose)`.
///
/// `round` and `client` are packed into the 64-bit ChaCha stream id, so they
/// must each fit in 32 bits.
pub fn rng_stream(master_seed: u64, round: u64, client: u64, purpose: Purpose) -> Stream {
    assert!(round <= u32::MAX as u64, "round index exceeds 32 bits");
    assert!(client <= u32::MAX as u64, "client index exceeds 32 bits");
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.tag().to_le_bytes());
    key[16..24].copy_from_slice(b"fedmom\x00\x01");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((round << 32) | client);
    rng
}

/// Seed handle that hands out per-(round, client, purpose) streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub master_seed: u64,
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn get(&self, round: usize, client: usize, purpose: Purpose) -> Stream {
        rng_stream(self.master_seed, round as u64, client as u64, purpose)
    }
}
