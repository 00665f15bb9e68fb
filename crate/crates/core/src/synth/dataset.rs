use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{load_clip, save_clip};
use super::scene::{
    generate_clip, Background, Boundary, MotionSpec, SceneObject, Shape, VideoClip, MAX_SPEED,
};
use crate::error::{EicError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Flat,
    Textured,
}

/// Recipe for a set of random clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub clips: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Largest integer speed component magnitude; speeds stay within 4 px/frame.
    pub max_speed: i64,
    pub boundary: Boundary,
    pub background: BackgroundKind,
    /// All objects share one velocity (rigid global motion).
    pub uniform_velocity: bool,
    pub min_object_size: usize,
    pub max_object_size: usize,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(EicError::Config(m));
        if self.clips == 0 {
            return fail("clips must be positive".into());
        }
        if self.frames_per_clip == 0 {
            return fail("frames_per_clip must be positive".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "object count range {}..={} is empty or zero",
                self.min_objects, self.max_objects
            ));
        }
        if !(0..=MAX_SPEED as i64).contains(&self.max_speed) {
            return fail(format!(
                "max_speed must be in 0..=4, got {}",
                self.max_speed
            ));
        }
        if self.min_object_size < 2 || self.min_object_size > self.max_object_size {
            return fail("object size range must satisfy 2 <= min <= max".into());
        }
        if self.max_object_size > self.height.min(self.width) {
            return fail("max_object_size exceeds the frame".into());
        }
        Ok(())
    }
}

fn sample_velocity(rng: &mut ChaCha8Rng, max_speed: i64) -> [i64; 2] {
    if max_speed == 0 {
        return [0, 0];
    }
    loop {
        let v = [
            rng.gen_range(-max_speed..=max_speed),
            rng.gen_range(-max_speed..=max_speed),
        ];
        let s2 = (v[0] * v[0] + v[1] * v[1]) as f64;
        if s2 > 0.0 && s2.sqrt() <= MAX_SPEED {
            return v;
        }
    }
}

/// Draws one random scene description.
pub fn sample_motion_spec(rng: &mut ChaCha8Rng, cfg: &DataConfig) -> MotionSpec {
    let channels = cfg.channels;
    let background = match cfg.background {
        BackgroundKind::Flat => Background::Flat {
            level: vec![rng.gen_range(0.0..0.25); channels],
        },
        BackgroundKind::Textured => Background::Textured {
            base: rng.gen_range(0.1..0.3),
            contrast: rng.gen_range(0.1..0.2),
            cell: 8,
        },
    };
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let shared = sample_velocity(rng, cfg.max_speed);
    let objects = (0..n)
        .map(|_| {
            let kind = rng.gen_range(0..3);
            let sizes = cfg.min_object_size..=cfg.max_object_size;
            let (a, b) = (rng.gen_range(sizes.clone()), rng.gen_range(sizes));
            let shape = match kind {
                0 => Shape::Rectangle {
                    width: a,
                    height: b,
                },
                1 => Shape::Disk {
                    radius: (a / 2).max(1),
                },
                _ => Shape::TexturedPatch {
                    width: a,
                    height: b,
                    cell: 3,
                    contrast: rng.gen_range(0.3..0.6),
                },
            };
            let (ew, eh) = match shape {
                Shape::Rectangle { width, height } | Shape::TexturedPatch { width, height, .. } => {
                    (width, height)
                }
                Shape::Disk { radius } => (2 * radius, 2 * radius),
            };
            let color = (0..channels).map(|_| rng.gen_range(0.4..0.95)).collect();
            let position = [
                rng.gen_range(0..=(cfg.width - ew) as i64),
                rng.gen_range(0..=(cfg.height - eh) as i64),
            ];
            let velocity = if cfg.uniform_velocity {
                shared
            } else {
                sample_velocity(rng, cfg.max_speed)
            };
            SceneObject {
                shape,
                color,
                position,
                velocity,
            }
        })
        .collect();
    MotionSpec {
        boundary: cfg.boundary,
        background,
        objects,
    }
}

/// Generates the whole clip set; clip `i` is named `clip_{i:04}`.
pub fn generate_dataset(cfg: &DataConfig) -> Result<Vec<VideoClip>> {
    cfg.validate()?;
    (0..cfg.clips)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let spec = sample_motion_spec(&mut rng, cfg);
            let clip_seed = rng.gen::<u64>();
            let mut clip =
                generate_clip(&spec, clip_seed, cfg.frames_per_clip, cfg.height, cfg.width)?;
            clip.id = format!("clip_{i:04}");
            Ok(clip)
        })
        .collect()
}

/// Writes every clip as `<id>.eicv` plus sidecar; returns the written paths.
pub fn save_dataset(clips: &[VideoClip], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| EicError::io(dir, e))?;
    let mut written = Vec::with_capacity(clips.len() * 2);
    for clip in clips {
        let path = dir.join(format!("{}.eicv", clip.id));
        save_clip(clip, &path)?;
        written.push(path.with_extension("json"));
        written.push(path);
    }
    Ok(written)
}

/// Loads every `.eicv` file in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<VideoClip>> {
    let entries = std::fs::read_dir(dir).map_err(|e| EicError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| EicError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "eicv") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(EicError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .eicv clips in directory"),
        ));
    }
    paths.sort();
    paths.iter().map(|p| load_clip(p)).collect()
}
