//! Synthetic video clips with known motion, windowing and clip files.

mod dataset;
mod frame;
mod io;
mod scene;
mod window;

pub use dataset::{
    generate_dataset, load_dataset, sample_motion_spec, save_dataset, BackgroundKind, DataConfig,
};
pub use frame::{stack_frames, Frame, MIN_FRAME_SIDE};
pub use io::{
    decode_frames, encode_clip, export_png, load_clip, quantize_u8, save_clip, sidecar_path,
    CLIP_MAGIC, CLIP_VERSION,
};
pub use scene::{
    generate_clip, Background, Boundary, MotionSpec, SceneObject, Shape, VideoClip, MAX_SPEED,
};
pub use window::{window_all, window_samples, ClipWindow, Windows};
