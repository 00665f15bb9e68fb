//! Synthetic scenes with analytically known motion.
//!
//! Objects are rasterised in their own local frame and then stamped at an
//! integer position, so a periodic scene in which every object shares one
//! velocity `v` over a flat background satisfies
//! `frame(t) == frame(t - 1).rolled(v)` exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, MIN_FRAME_SIDE};
use crate::error::{EicError, Result};

/// Largest allowed speed, in pixels per frame.
pub const MAX_SPEED: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Objects leave one edge and re-enter at the opposite edge.
    Periodic,
    /// Objects reflect off the frame edges.
    Bounce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Background {
    Flat {
        level: Vec<f64>,
    },
    /// Static seeded value noise: `base + contrast · (noise − 0.5)`.
    Textured {
        base: f64,
        contrast: f64,
        cell: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shape {
    Rectangle {
        width: usize,
        height: usize,
    },
    Disk {
        radius: usize,
    },
    /// Rectangle whose intensity is modulated by seeded value noise.
    TexturedPatch {
        width: usize,
        height: usize,
        cell: usize,
        contrast: f64,
    },
}

impl Shape {
    fn extent(&self) -> (usize, usize) {
        match *self {
            Shape::Rectangle { width, height } | Shape::TexturedPatch { width, height, .. } => {
                (width, height)
            }
            Shape::Disk { radius } => (2 * radius, 2 * radius),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    /// One value per channel.
    pub color: Vec<f64>,
    /// Top-left corner of the bounding box at frame 0, `(x, y)`.
    pub position: [i64; 2],
    /// Pixels per frame, `(vx, vy)`.
    pub velocity: [i64; 2],
}

/// Everything except the seed that determines a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub boundary: Boundary,
    pub background: Background,
    pub objects: Vec<SceneObject>,
}

impl MotionSpec {
    /// The single global translation per frame, when the whole frame moves
    /// rigidly: periodic boundary, flat background, all objects sharing one
    /// velocity.
    pub fn uniform_velocity(&self) -> Option<[i64; 2]> {
        if self.boundary != Boundary::Periodic
            || !matches!(self.background, Background::Flat { .. })
        {
            return None;
        }
        let first = self.objects.first()?.velocity;
        self.objects
            .iter()
            .all(|o| o.velocity == first)
            .then_some(first)
    }

    pub fn validate(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(EicError::Spec(format!(
                "frame {height}x{width} below the {MIN_FRAME_SIDE}px minimum"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(EicError::Spec(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        match &self.background {
            Background::Flat { level } => check_color(level, channels, "background")?,
            Background::Textured {
                base,
                contrast,
                cell,
            } => {
                if *cell == 0 || !(0.0..=1.0).contains(base) || *contrast < 0.0 {
                    return Err(EicError::Spec(
                        "textured background needs cell > 0, base in [0,1], contrast >= 0".into(),
                    ));
                }
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            let (ew, eh) = o.shape.extent();
            if ew == 0 || eh == 0 || ew > width || eh > height {
                return Err(EicError::Spec(format!(
                    "object {i}: extent {ew}x{eh} does not fit a {width}x{height} frame"
                )));
            }
            if let Shape::TexturedPatch { cell, contrast, .. } = o.shape {
                if cell == 0 || contrast < 0.0 {
                    return Err(EicError::Spec(format!(
                        "object {i}: textured patch needs cell > 0 and contrast >= 0"
                    )));
                }
            }
            check_color(&o.color, channels, &format!("object {i}"))?;
            let [vx, vy] = o.velocity;
            let speed = ((vx * vx + vy * vy) as f64).sqrt();
            if speed > MAX_SPEED {
                return Err(EicError::Spec(format!(
                    "object {i}: speed {speed:.3} exceeds {MAX_SPEED} px/frame"
                )));
            }
            if self.boundary == Boundary::Bounce {
                let [x, y] = o.position;
                let (mx, my) = ((width - ew) as i64, (height - eh) as i64);
                if !(0..=mx).contains(&x) || !(0..=my).contains(&y) {
                    return Err(EicError::Spec(format!(
                        "object {i}: bounce mode needs the object inside the frame at t=0"
                    )));
                }
                if (mx == 0 && vx != 0) || (my == 0 && vy != 0) {
                    return Err(EicError::Spec(format!(
                        "object {i}: no room to move along an axis it spans"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_color(c: &[f64], channels: usize, what: &str) -> Result<()> {
    if c.len() != channels || c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(EicError::Spec(format!(
            "{what}: color needs {channels} values in [0,1], got {c:?}"
        )));
    }
    Ok(())
}

/// Smoothly interpolated lattice noise in `[0, 1]` over a `w × h` area.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: usize) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (gy, ty) = (y / cell, smooth((y % cell) as f64 / cell as f64));
        for x in 0..w {
            let (gx, tx) = (x / cell, smooth((x % cell) as f64 / cell as f64));
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
            let bot = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Local raster of one object: per-pixel coverage and intensity scale.
struct Sprite {
    width: usize,
    height: usize,
    cover: Vec<bool>,
    /// Multiplicative offset added to the color, per pixel.
    offset: Vec<f64>,
}

impl Sprite {
    fn render(shape: &Shape, rng: &mut ChaCha8Rng) -> Sprite {
        let (width, height) = shape.extent();
        let n = width * height;
        match *shape {
            Shape::Rectangle { .. } => Sprite {
                width,
                height,
                cover: vec![true; n],
                offset: vec![0.0; n],
            },
            Shape::Disk { radius } => {
                let r = radius as f64;
                let cover = (0..n)
                    .map(|i| {
                        let (x, y) = ((i % width) as f64 + 0.5 - r, (i / width) as f64 + 0.5 - r);
                        x * x + y * y <= r * r
                    })
                    .collect();
                Sprite {
                    width,
                    height,
                    cover,
                    offset: vec![0.0; n],
                }
            }
            Shape::TexturedPatch { cell, contrast, .. } => {
                let noise = value_noise(rng, width, height, cell);
                Sprite {
                    width,
                    height,
                    cover: vec![true; n],
                    offset: noise.iter().map(|v| contrast * (v - 0.5)).collect(),
                }
            }
        }
    }
}

/// Reflects `p` into `[0, max]`, flipping `v` on every bounce.
fn bounce_step(p: &mut i64, v: &mut i64, max: i64) {
    *p += *v;
    loop {
        if *p < 0 {
            *p = -*p;
            *v = -*v;
        } else if *p > max {
            *p = 2 * max - *p;
            *v = -*v;
        } else {
            break;
        }
    }
}

/// A generated clip with the parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: String,
    pub frames: Vec<Frame>,
    pub motion_spec: MotionSpec,
    pub seed: u64,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width, channels)` of the first frame.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(Frame::dims)
    }
}

/// Renders `frame_count` frames of `spec`. Pure in `(spec, seed)`.
pub fn generate_clip(
    spec: &MotionSpec,
    seed: u64,
    frame_count: usize,
    height: usize,
    width: usize,
) -> Result<VideoClip> {
    let channels = match &spec.background {
        Background::Flat { level } => level.len(),
        Background::Textured { .. } => spec.objects.first().map_or(1, |o| o.color.len()),
    };
    spec.validate(height, width, channels)?;
    if frame_count == 0 {
        return Err(EicError::Spec("frame_count must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background: Vec<f64> = match &spec.background {
        Background::Flat { level } => (0..height * width)
            .flat_map(|_| level.iter().copied())
            .collect(),
        Background::Textured {
            base,
            contrast,
            cell,
        } => value_noise(&mut rng, width, height, *cell)
            .into_iter()
            .flat_map(|v| {
                let px = (base + contrast * (v - 0.5)).clamp(0.0, 1.0);
                std::iter::repeat_n(px, channels)
            })
            .collect(),
    };
    let sprites: Vec<Sprite> = spec
        .objects
        .iter()
        .map(|o| Sprite::render(&o.shape, &mut rng))
        .collect();

    let mut positions: Vec<[i64; 2]> = spec.objects.iter().map(|o| o.position).collect();
    let mut velocities: Vec<[i64; 2]> = spec.objects.iter().map(|o| o.velocity).collect();
    let mut frames = Vec::with_capacity(frame_count);
    for t in 0..frame_count {
        if t > 0 {
            for ((pos, vel), s) in positions
                .iter_mut()
                .zip(velocities.iter_mut())
                .zip(&sprites)
            {
                match spec.boundary {
                    Boundary::Periodic => {
                        pos[0] = (pos[0] + vel[0]).rem_euclid(width as i64);
                        pos[1] = (pos[1] + vel[1]).rem_euclid(height as i64);
                    }
                    Boundary::Bounce => {
                        bounce_step(&mut pos[0], &mut vel[0], (width - s.width) as i64);
                        bounce_step(&mut pos[1], &mut vel[1], (height - s.height) as i64);
                    }
                }
            }
        }
        let mut pixels = background.clone();
        for ((obj, sprite), pos) in spec.objects.iter().zip(&sprites).zip(&positions) {
            for ly in 0..sprite.height {
                for lx in 0..sprite.width {
                    let i = ly * sprite.width + lx;
                    if !sprite.cover[i] {
                        continue;
                    }
                    let x = (pos[0] + lx as i64).rem_euclid(width as i64) as usize;
                    let y = (pos[1] + ly as i64).rem_euclid(height as i64) as usize;
                    let dst = (y * width + x) * channels;
                    for (ch, &col) in obj.color.iter().enumerate() {
                        pixels[dst + ch] = (col + sprite.offset[i]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        frames.push(Frame::new(height, width, channels, pixels)?);
    }
    Ok(VideoClip {
        id: format!("clip_{seed:016x}"),
        frames,
        motion_spec: spec.clone(),
        seed,
    })
}
