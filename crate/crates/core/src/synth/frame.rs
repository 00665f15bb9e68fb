use crate::error::{EicError, Result};
use crate::tensor::Tensor;

/// Smallest supported frame side.
pub const MIN_FRAME_SIDE: usize = 16;

/// One image: `height × width × channels`, channel-last, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(EicError::dim(
                "H/W",
                format!("frames must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {height}x{width}"),
            ));
        }
        if channels != 1 && channels != 3 {
            return Err(EicError::dim(
                "C",
                format!("channels must be 1 or 3, got {channels}"),
            ));
        }
        if pixels.len() != height * width * channels {
            return Err(EicError::dim(
                "pixels",
                format!(
                    "{height}x{width}x{channels} frame needs {} values, got {}",
                    height * width * channels,
                    pixels.len()
                ),
            ));
        }
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(EicError::Contract(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Frame {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(EicError::dim(
                "frame",
                format!("{:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        Ok(())
    }

    /// Circular shift: content moves `dx` columns right and `dy` rows down.
    pub fn rolled(&self, dx: i64, dy: i64) -> Frame {
        let (h, w, c) = self.dims();
        let sx = dx.rem_euclid(w as i64) as usize;
        let sy = dy.rem_euclid(h as i64) as usize;
        let mut out = vec![0.0; self.pixels.len()];
        for y in 0..h {
            for x in 0..w {
                let dst = (((y + sy) % h) * w + (x + sx) % w) * c;
                let src = (y * w + x) * c;
                out[dst..dst + c].copy_from_slice(&self.pixels[src..src + c]);
            }
        }
        Frame {
            pixels: out,
            ..*self
        }
    }

    /// Channel-first `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = self.dims();
        let mut data = vec![0.0; h * w * c];
        for (p, px) in self.pixels.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + p] = v;
            }
        }
        Tensor::new(vec![1, c, h, w], data).expect("frame dims are positive")
    }

    /// Inverse of [`Frame::to_tensor`] for batch entry `index`. Values are
    /// clamped into `[0, 1]`; non-finite values are rejected.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Frame> {
        let [n, c, h, w] = t.dims4()?;
        if index >= n {
            return Err(EicError::dim(
                "N",
                format!("batch index {index} out of {n}"),
            ));
        }
        let plane = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        if plane.iter().any(|v| !v.is_finite()) {
            return Err(EicError::Contract(
                "non-finite value in frame tensor".into(),
            ));
        }
        let mut pixels = vec![0.0; h * w * c];
        for ch in 0..c {
            for p in 0..h * w {
                pixels[p * c + ch] = plane[ch * h * w + p].clamp(0.0, 1.0);
            }
        }
        Frame::new(h, w, c, pixels)
    }

    /// Rounds every value to the nearest 32-bit float (storage precision).
    pub fn quantized_f32(&self) -> Frame {
        Frame {
            pixels: self.pixels.iter().map(|&v| v as f32 as f64).collect(),
            ..*self
        }
    }
}

/// Stacks frames channel-wise into `[1, n·C, H, W]`, oldest first.
pub fn stack_frames(frames: &[Frame]) -> Result<Tensor> {
    let first = frames.first().ok_or(EicError::Arity {
        what: "frames",
        expected: 1,
        got: 0,
    })?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(frames.len() * h * w * c);
    for f in frames {
        first.same_dims(f)?;
        data.extend_from_slice(f.to_tensor().data());
    }
    Tensor::new(vec![1, frames.len() * c, h, w], data)
}
