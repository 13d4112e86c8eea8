//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from the
//! master seed plus a small set of index words (a counter-based scheme).
//! The full 256-bit key is `[master | tag | a | b]`, so distinct index
//! tuples give independent streams with no collision bookkeeping, and any
//! frame, pixel, or training step is reproducible in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams from unrelated subsystems disjoint.
#[derive(Copy, Clone, Debug)]
#[repr(u64)]
pub enum StreamTag {
    Lighting = 1,
    Pixel = 2,
    ParamInit = 3,
    EpochShuffle = 4,
    Jitter = 5,
    Probe = 6,
}

/// Frame index reserved for the exposure-calibration reference render.
pub const CALIBRATION_FRAME: u64 = u64::MAX;

/// Derive the stream for `(tag, a, b)` under `master`.
pub fn stream(master: u64, tag: StreamTag, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&(tag as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream for one spotlight in one frame of one object sequence.
pub fn light_stream(master: u64, object: u64, frame: u64, light: u64) -> ChaCha8Rng {
    stream(master, StreamTag::Lighting, (object << 32) | frame, light)
}

/// Stream for one pixel of one rendered frame.
pub fn pixel_stream(master: u64, frame_global: u64, pixel: u64) -> ChaCha8Rng {
    stream(master, StreamTag::Pixel, frame_global, pixel)
}
