//! Bilinear backward warping with border clamping.
//!
//! Output pixel `(x, y)` samples the image at `(x + dx, y + dy)`, where the
//! flow channels are ordered `(dx, dy)` in pixel units. Sample coordinates
//! are clamped to `[0, W-1] × [0, H-1]`; along a clamped axis the derivative
//! with respect to the flow is zero.

struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: f64,
    wy: f64,
    /// 1 when the coordinate was inside the image, 0 when clamped.
    gx: f64,
    gy: f64,
}

#[inline]
fn clamp_axis(s: f64, n: usize) -> (usize, usize, f64, f64) {
    let hi = (n - 1) as f64;
    let (c, inside) = if s < 0.0 {
        (0.0, 0.0)
    } else if s > hi {
        (hi, 0.0)
    } else {
        (s, 1.0)
    };
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64, inside)
}

#[inline]
fn tap(x: usize, y: usize, dx: f64, dy: f64, h: usize, w: usize) -> Tap {
    let (x0, x1, wx, gx) = clamp_axis(x as f64 + dx, w);
    let (y0, y1, wy, gy) = clamp_axis(y as f64 + dy, h);
    Tap {
        x0,
        x1,
        y0,
        y1,
        wx,
        wy,
        gx,
        gy,
    }
}

pub(crate) fn forward(image: &[f64], flow: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; n * c * hw];
    for b in 0..n {
        let fx = &flow[(b * 2) * hw..(b * 2 + 1) * hw];
        let fy = &flow[(b * 2 + 1) * hw..(b * 2 + 2) * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = tap(x, y, fx[p], fy[p], h, w);
                for ch in 0..c {
                    let img = &image[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    let top = img[t.y0 * w + t.x0] * (1.0 - t.wx) + img[t.y0 * w + t.x1] * t.wx;
                    let bot = img[t.y1 * w + t.x0] * (1.0 - t.wx) + img[t.y1 * w + t.x1] * t.wx;
                    out[(b * c + ch) * hw + p] = top * (1.0 - t.wy) + bot * t.wy;
                }
            }
        }
    }
    out
}

/// Returns `(d image, d flow)`, each only when requested.
pub(crate) fn backward(
    image: &[f64],
    flow: &[f64],
    dout: &[f64],
    [n, c, h, w]: [usize; 4],
    want_image: bool,
    want_flow: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw = h * w;
    let mut dimg = want_image.then(|| vec![0.0; n * c * hw]);
    let mut dflow = want_flow.then(|| vec![0.0; n * 2 * hw]);
    for b in 0..n {
        let fx = &flow[(b * 2) * hw..(b * 2 + 1) * hw];
        let fy = &flow[(b * 2 + 1) * hw..(b * 2 + 2) * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = tap(x, y, fx[p], fy[p], h, w);
                let (mut gfx, mut gfy) = (0.0, 0.0);
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let g = dout[base + p];
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(di) = dimg.as_mut() {
                        let di = &mut di[base..base + hw];
                        di[t.y0 * w + t.x0] += g * (1.0 - t.wx) * (1.0 - t.wy);
                        di[t.y0 * w + t.x1] += g * t.wx * (1.0 - t.wy);
                        di[t.y1 * w + t.x0] += g * (1.0 - t.wx) * t.wy;
                        di[t.y1 * w + t.x1] += g * t.wx * t.wy;
                    }
                    if dflow.is_some() {
                        let img = &image[base..base + hw];
                        let (a, bb) = (img[t.y0 * w + t.x0], img[t.y0 * w + t.x1]);
                        let (cc, d) = (img[t.y1 * w + t.x0], img[t.y1 * w + t.x1]);
                        gfx += g * ((bb - a) * (1.0 - t.wy) + (d - cc) * t.wy);
                        gfy += g * ((cc - a) * (1.0 - t.wx) + (d - bb) * t.wx);
                    }
                }
                if let Some(df) = dflow.as_mut() {
                    df[(b * 2) * hw + p] += gfx * t.gx;
                    df[(b * 2 + 1) * hw + p] += gfy * t.gy;
                }
            }
        }
    }
    (dimg, dflow)
}
