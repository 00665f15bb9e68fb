//! `.eicv` clip files, JSON sidecars and PNG export.
//!
//! Layout (all little-endian): `b"EICV"`, version `u16`, then `u32`
//! frame_count, height, width, channels, then frame-major, row-major,
//! channel-last `f32` samples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::scene::{MotionSpec, VideoClip};
use crate::error::{EicError, Result};
use crate::fsutil::write_atomic;

pub const CLIP_MAGIC: &[u8; 4] = b"EICV";
pub const CLIP_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    motion_spec: MotionSpec,
    seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_clip(clip: &VideoClip) -> Result<Vec<u8>> {
    let (h, w, c) = clip
        .dims()
        .ok_or_else(|| EicError::Contract("cannot store an empty clip".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + clip.len() * h * w * c * 4);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for v in [clip.len(), h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in &clip.frames {
        if f.dims() != (h, w, c) {
            return Err(EicError::dim("frame", "clip frames differ in shape"));
        }
        for &v in f.pixels() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes frames from an `.eicv` byte buffer. No partial result is ever
/// returned: any inconsistency fails the whole decode.
pub fn decode_frames(bytes: &[u8]) -> Result<Vec<Frame>> {
    if bytes.len() < HEADER_LEN {
        return Err(EicError::format(
            bytes.len() as u64,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != CLIP_MAGIC {
        return Err(EicError::format(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CLIP_VERSION {
        return Err(EicError::format(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let field = |i: usize| {
        let o = 6 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (count, h, w, c) = (field(0), field(1), field(2), field(3));
    let frame_len = h * w * c;
    let expected = count as u128 * frame_len as u128 * 4;
    let actual = (bytes.len() - HEADER_LEN) as u128;
    if expected != actual {
        return Err(EicError::format(
            HEADER_LEN as u64,
            format!("payload size mismatch: header implies {expected} bytes, found {actual}"),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    let mut frames = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(frame_len * 4).enumerate() {
        let pixels: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let frame = Frame::new(h, w, c, pixels).map_err(|e| {
            EicError::format(
                (HEADER_LEN + i * frame_len * 4) as u64,
                format!("frame {i}: {e}"),
            )
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Writes `<path>` and its `<path>.json` sidecar.
pub fn save_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    let bytes = encode_clip(clip)?;
    let sidecar = serde_json::to_vec_pretty(&Sidecar {
        motion_spec: clip.motion_spec.clone(),
        seed: clip.seed,
    })?;
    write_atomic(&sidecar_path(path), &sidecar)?;
    write_atomic(path, &bytes)
}

/// Reads a clip and its sidecar. The clip id is the file stem.
pub fn load_clip(path: &Path) -> Result<VideoClip> {
    let bytes = std::fs::read(path).map_err(|e| EicError::io(path, e))?;
    let frames = decode_frames(&bytes)?;
    let side = sidecar_path(path);
    let text = std::fs::read(&side).map_err(|e| EicError::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&text)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(VideoClip {
        id,
        frames,
        motion_spec: sidecar.motion_spec,
        seed: sidecar.seed,
    })
}

/// Maps `v ∈ [0, 1]` to `round(v · 255)`, halves rounding up.
pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit grayscale (1 channel) or RGB (3 channel) PNG from
/// channel-last values that must already lie in `[0, 1]`.
pub fn export_png(
    pixels: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    path: &Path,
) -> Result<()> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(EicError::dim(
                "C",
                format!("PNG export supports 1 or 3 channels, got {c}"),
            ))
        }
    };
    if pixels.len() != height * width * channels {
        return Err(EicError::dim("pixels", "buffer does not match dimensions"));
    }
    if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(EicError::Contract(format!(
            "value {} at index {i} outside [0, 1]; normalize before export",
            pixels[i]
        )));
    }
    let bytes: Vec<u8> = pixels.iter().map(|&v| quantize_u8(v)).collect();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| EicError::io(path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| EicError::io(path, std::io::Error::other(e)))?;
    }
    write_atomic(path, &buf)
}

impl Frame {
    pub fn export_png(&self, path: &Path) -> Result<()> {
        export_png(
            self.pixels(),
            self.height(),
            self.width(),
            self.channels(),
            path,
        )
    }
}
