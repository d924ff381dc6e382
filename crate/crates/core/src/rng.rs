//! Seeded, per-job random streams.
//!
//! Every job draws from its own ChaCha stream selected by a key derived from
//! the run seed and the job's coordinates, so results do not depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type JobRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for the job identified by `path` under `seed`.
pub fn job_rng(seed: u64, path: &[u64]) -> JobRng {
    let stream = path.iter().fold(0x51_7cc1_b727_220a_u64, |acc, &p| splitmix(acc ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Job tags keep streams of different purposes apart.
pub mod tag {
    pub const CAVIAR: u64 = 1;
    pub const SIMULATE: u64 = 2;
    pub const INJECT: u64 = 3;
    pub const CAMPAIGN: u64 = 4;
}
