//! Counter-based random streams.
//!
//! Each trial owns a ChaCha8 key derived from `(base_seed, trial_index)`, and
//! each consumer inside the trial (arm reward draws, action draws, Monte-Carlo
//! propensity estimation, binarization) reads its own ChaCha stream under
//! that key. Streams never overlap, so results do not depend on how trials
//! are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers within a trial key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Action,
    MonteCarlo,
    Binarize,
    /// Reward draws for one arm.
    Reward(usize),
}

impl Role {
    fn stream_id(self) -> u64 {
        match self {
            Role::Action => 1,
            Role::MonteCarlo => 2,
            Role::Binarize => 3,
            Role::Reward(arm) => 0x1_0000 + arm as u64,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial_index` in a batch seeded with `base_seed`.
pub fn trial_seed(base_seed: u64, trial_index: u64) -> u64 {
    mix64(mix64(base_seed) ^ trial_index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Opens the stream for `role` under the key derived from `seed`.
pub fn stream(seed: u64, role: Role) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&mix64(seed).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(role.stream_id());
    rng
}

/// All streams used by one trial.
#[derive(Debug, Clone)]
pub struct TrialStreams {
    pub action: ChaCha8Rng,
    pub monte_carlo: ChaCha8Rng,
    pub binarize: ChaCha8Rng,
    pub rewards: Vec<ChaCha8Rng>,
}

impl TrialStreams {
    pub fn new(seed: u64, n_arms: usize) -> Self {
        TrialStreams {
            action: stream(seed, Role::Action),
            monte_carlo: stream(seed, Role::MonteCarlo),
            binarize: stream(seed, Role::Binarize),
            rewards: (0..n_arms).map(|a| stream(seed, Role::Reward(a))).collect(),
        }
    }
}
