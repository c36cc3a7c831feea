//! Keyed random substreams.
//!
//! Every `(master seed, frame key, stage, lane)` tuple maps to its own ChaCha8
//! stream: the master seed is the key, the rest is packed into the 64-bit
//! stream id. Streams are therefore independent of the order in which frames
//! or stages are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DegradeError;

pub const MAX_FRAME_KEY: u64 = u32::MAX as u64;
pub const MAX_STAGES: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    /// Parameter draws of [`super::sample_stage`].
    Sample = 0,
    /// Noise realization of [`super::apply_stage`].
    Noise = 1,
}

pub fn substream(
    master_seed: u64,
    frame_key: u64,
    stage: u32,
    lane: Lane,
) -> Result<ChaCha8Rng, DegradeError> {
    if frame_key > MAX_FRAME_KEY {
        return Err(DegradeError::Config(format!(
            "frame key {frame_key} exceeds {MAX_FRAME_KEY}"
        )));
    }
    if stage >= MAX_STAGES {
        return Err(DegradeError::Config(format!("stage index {stage} too large")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((frame_key << 32) | ((stage as u64) << 8) | lane as u64);
    Ok(rng)
}
