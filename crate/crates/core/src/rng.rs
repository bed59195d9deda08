//! Seeded random streams.
//!
//! Every source of randomness draws from ChaCha8 keyed by the master seed
//! and a sub-key (trial, epoch, ...), with a distinct ChaCha stream id per
//! concern. Changing how many draws one concern makes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Splits = 1,
    Shuffle = 2,
    Augment = 3,
    Descriptors = 4,
    Init = 5,
    Synthetic = 6,
    Noise = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the child keyed by `sub_key` under `master_seed`.
pub fn derive_seed(master_seed: u64, sub_key: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(sub_key))
}

pub fn stream_rng(master_seed: u64, stream: Stream, sub_key: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, sub_key));
    rng.set_stream(stream as u64);
    rng
}

/// Serializable position of a [`Rng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
