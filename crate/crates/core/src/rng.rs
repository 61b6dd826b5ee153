//! Seed derivation. Every random consumer draws from its own ChaCha stream keyed
//! by (master seed, purpose tag, indices), so one consumer can never shift
//! another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for derived streams.
pub mod tag {
    pub const POOL: u64 = 0x706f_6f6c;
    pub const OBS: u64 = 0x006f_6273;
    pub const TREATMENT: u64 = 0x0074_7265_6174;
    pub const OUTCOME: u64 = 0x006f_7574_636f_6d65;
    pub const SELECTION: u64 = 0x7365_6c65_6374;
    pub const ENSEMBLE: u64 = 0x656e_7365_6d62;
    pub const REPLICATION: u64 = 0x7265_706c;
    pub const TEST_SET: u64 = 0x7465_7374;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with an ordered list of parts.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}
