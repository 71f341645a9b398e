//! Seeded random streams.
//!
//! Every random decision in a run is drawn from a ChaCha8 stream derived
//! from the run seed and a fixed stream tag, so adding draws in one part of
//! the pipeline never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, tag: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Stream tags used by the pipeline.
pub mod tags {
    pub const ENCODER_INIT: u64 = 1;
    pub const DECODER_INIT: u64 = 2;
    pub const SEGMENTER_INIT: u64 = 3;
    pub const DATA: u64 = 4;
    pub const PRETRAIN: u64 = 5;
    pub const MEMORY: u64 = 6;
    pub const DECODER_TRAIN: u64 = 7;
    pub const SEGMENTER_TRAIN: u64 = 8;
}
