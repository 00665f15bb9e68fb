//! Shared clip sets for integration tests.

use eic_core::synth::{generate_dataset, BackgroundKind, Boundary, DataConfig, VideoClip};

/// Periodic clips on a flat background where every object shares one
/// integer velocity, so each frame is an exact roll of the previous one.
pub fn rigid_config(seed: u64, clips: usize, frames: usize, side: usize) -> DataConfig {
    DataConfig {
        seed,
        clips,
        frames_per_clip: frames,
        height: side,
        width: side,
        channels: 1,
        min_objects: 1,
        max_objects: 3,
        max_speed: 3,
        boundary: Boundary::Periodic,
        background: BackgroundKind::Flat,
        uniform_velocity: true,
        min_object_size: 4,
        max_object_size: 10,
    }
}

pub fn rigid_clips(seed: u64, clips: usize, frames: usize, side: usize) -> Vec<VideoClip> {
    generate_dataset(&rigid_config(seed, clips, frames, side)).unwrap()
}
