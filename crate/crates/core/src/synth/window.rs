use super::frame::Frame;
use super::scene::VideoClip;
use crate::error::{EicError, Result};

/// `k` consecutive past frames followed directly by `horizon` targets.
#[derive(Clone, Copy, Debug)]
pub struct ClipWindow<'a> {
    /// `I_{t-k} .. I_{t-1}`, oldest first.
    pub past: &'a [Frame],
    /// `I_t .. I_{t+h-1}`.
    pub targets: &'a [Frame],
    pub clip_id: &'a str,
    /// Index of `I_t` in the source clip.
    pub t_index: usize,
}

impl ClipWindow<'_> {
    pub fn k(&self) -> usize {
        self.past.len()
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }

    pub fn last_past(&self) -> &Frame {
        self.past.last().expect("windows have k >= 2")
    }
}

/// Windows cut from one clip, plus a note when the clip was too short.
#[derive(Debug)]
pub struct Windows<'a> {
    pub windows: Vec<ClipWindow<'a>>,
    pub warning: Option<String>,
}

/// All maximal windows at `stride`; there are `(T - k - horizon) / stride + 1`
/// of them when `T >= k + horizon`.
pub fn window_samples(
    clip: &VideoClip,
    k: usize,
    horizon: usize,
    stride: usize,
) -> Result<Windows<'_>> {
    if k < 2 {
        return Err(EicError::Config(format!("k must be at least 2, got {k}")));
    }
    if horizon == 0 || stride == 0 {
        return Err(EicError::Config(
            "horizon and stride must be positive".into(),
        ));
    }
    let t_len = clip.frames.len();
    if t_len < k + horizon {
        let msg = format!(
            "clip {} has {t_len} frames, needs {} for k={k}, horizon={horizon}",
            clip.id,
            k + horizon
        );
        log::warn!("{msg}");
        return Ok(Windows {
            windows: Vec::new(),
            warning: Some(msg),
        });
    }
    let windows = (0..=t_len - k - horizon)
        .step_by(stride)
        .map(|start| ClipWindow {
            past: &clip.frames[start..start + k],
            targets: &clip.frames[start + k..start + k + horizon],
            clip_id: &clip.id,
            t_index: start + k,
        })
        .collect();
    Ok(Windows {
        windows,
        warning: None,
    })
}

/// Windows from every clip, in clip order.
pub fn window_all<'a>(
    clips: &'a [VideoClip],
    k: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<ClipWindow<'a>>> {
    let mut out = Vec::new();
    for clip in clips {
        out.extend(window_samples(clip, k, horizon, stride)?.windows);
    }
    Ok(out)
}
