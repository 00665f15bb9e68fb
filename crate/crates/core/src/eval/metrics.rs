use crate::error::{EicError, Result};
use crate::synth::{export_png, Frame};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.same_dims(gt)?;
    let s: f64 = pred
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.pixels().len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Frame, gt: &Frame, peak: f64) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-region Gaussian filter of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over the valid region with an 11×11
/// Gaussian window (σ = 1.5), `C1 = (0.01·L)²`, `C2 = (0.03·L)²`, `L = 1`.
/// Multi-channel frames average the per-channel scores.
pub fn ssim(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.same_dims(gt)?;
    let (h, w, c) = pred.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(EicError::dim(
            "H/W",
            format!("SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"),
        ));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let k = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = pred.pixels().iter().skip(ch).step_by(c).copied().collect();
        let y: Vec<f64> = gt.pixels().iter().skip(ch).step_by(c).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, my) = (filter_valid(&x, h, w, &k), filter_valid(&y, h, w, &k));
        let (sxx, syy, sxy) = (
            filter_valid(&xx, h, w, &k),
            filter_valid(&yy, h, w, &k),
            filter_valid(&xy, h, w, &k),
        );
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            acc +=
                ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Per-pixel absolute error averaged over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ErrorMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn export_png(&self, path: &std::path::Path) -> Result<()> {
        export_png(&self.values, self.height, self.width, 1, path)
    }
}

pub fn error_map(pred: &Frame, gt: &Frame) -> Result<ErrorMap> {
    pred.same_dims(gt)?;
    let (h, w, c) = pred.dims();
    let values = pred
        .pixels()
        .chunks_exact(c)
        .zip(gt.pixels().chunks_exact(c))
        .map(|(a, b)| {
            let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum();
            (s / c as f64).min(1.0)
        })
        .collect();
    Ok(ErrorMap {
        height: h,
        width: w,
        values,
    })
}
