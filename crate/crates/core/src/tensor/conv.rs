//! Cross-correlation via im2col + GEMM.

use crate::error::{EicError, Result};

/// How out-of-range taps are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zeros,
    /// Mirror about the edge sample, excluding it (`[.., 2, 1, | 0, 1, 2, ..]`).
    Reflect,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub mode: PadMode,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        stride: usize,
        padding: usize,
        mode: PadMode,
    ) -> Result<Self> {
        let &[n, cin, h, w] = input else {
            return Err(EicError::dim(
                "input rank",
                format!("expected [N,C,H,W], got {input:?}"),
            ));
        };
        let &[cout, kcin, kh, kw] = kernel else {
            return Err(EicError::dim(
                "kernel rank",
                format!("expected [C_out,C_in,kH,kW], got {kernel:?}"),
            ));
        };
        if kcin != cin {
            return Err(EicError::dim(
                "C_in",
                format!("input has {cin} channels, kernel expects {kcin}"),
            ));
        }
        if bias != [cout] {
            return Err(EicError::dim(
                "C_out",
                format!("bias shape {bias:?} does not match {cout} output channels"),
            ));
        }
        if stride == 0 {
            return Err(EicError::Contract("stride must be positive".into()));
        }
        if mode == PadMode::Reflect && (padding >= h || padding >= w) {
            return Err(EicError::dim(
                "padding",
                format!("reflect padding {padding} needs H, W > padding (got {h}x{w})"),
            ));
        }
        if kh > h + 2 * padding {
            return Err(EicError::dim(
                "H",
                format!(
                    "kernel height {kh} exceeds padded height {}",
                    h + 2 * padding
                ),
            ));
        }
        if kw > w + 2 * padding {
            return Err(EicError::dim(
                "W",
                format!("kernel width {kw} exceeds padded width {}", w + 2 * padding),
            ));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            padding,
            mode,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.ho, self.wo]
    }
}

/// For every (tap, output position) pair, the source index along one axis or
/// -1 for a zero-filled tap. Laid out as `[tap * n_out + out]`.
fn axis_map(
    n_in: usize,
    n_out: usize,
    taps: usize,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Vec<isize> {
    let n = n_in as isize;
    let mut map = Vec::with_capacity(taps * n_out);
    for t in 0..taps {
        for o in 0..n_out {
            let i = (o * stride + t) as isize - pad as isize;
            let src = if (0..n).contains(&i) {
                i
            } else {
                match mode {
                    PadMode::Zeros => -1,
                    PadMode::Reflect if i < 0 => -i,
                    PadMode::Reflect => 2 * (n - 1) - i,
                }
            };
            map.push(src);
        }
    }
    map
}

struct Maps {
    rows: Vec<isize>,
    cols: Vec<isize>,
}

impl Maps {
    fn new(g: &ConvGeom) -> Self {
        Maps {
            rows: axis_map(g.h, g.ho, g.kh, g.stride, g.padding, g.mode),
            cols: axis_map(g.w, g.wo, g.kw, g.stride, g.padding, g.mode),
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom, maps: &Maps, cols: &mut [f64]) {
    let p = g.out_pixels();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let rmap = &maps.rows[ky * g.ho..(ky + 1) * g.ho];
            for kx in 0..g.kw {
                let cmap = &maps.cols[kx * g.wo..(kx + 1) * g.wo];
                let dst = &mut cols[row * p..(row + 1) * p];
                for (oy, &iy) in rmap.iter().enumerate() {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (o, &ix) in out.iter_mut().zip(cmap) {
                        *o = if ix < 0 { 0.0 } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, maps: &Maps, dx: &mut [f64]) {
    let p = g.out_pixels();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let rmap = &maps.rows[ky * g.ho..(ky + 1) * g.ho];
            for kx in 0..g.kw {
                let cmap = &maps.cols[kx * g.wo..(kx + 1) * g.wo];
                let src = &cols[row * p..(row + 1) * p];
                for (oy, &iy) in rmap.iter().enumerate() {
                    if iy < 0 {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (&v, &ix) in src[oy * g.wo..(oy + 1) * g.wo].iter().zip(cmap) {
                        if ix >= 0 {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c[m×n] = alpha·op(a)·op(b) + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents cover every element addressed by the
    // given strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(x: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let maps = Maps::new(g);
    let (k, p) = (g.patch_len(), g.out_pixels());
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; g.n * g.cout * p];
    for n in 0..g.n {
        im2col(
            &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w],
            g,
            &maps,
            &mut cols,
        );
        let dst = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.fill(bias[co]);
        }
        gemm(g.cout, k, p, kernel, (k, 1), &cols, (p, 1), 1.0, dst);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    x: &[f64],
    kernel: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads {
    let maps = Maps::new(g);
    let (k, p) = (g.patch_len(), g.out_pixels());
    let plane_in = g.cin * g.h * g.w;
    let mut dx = want[0].then(|| vec![0.0; g.n * plane_in]);
    let mut dk = want[1].then(|| vec![0.0; g.cout * k]);
    let mut db = want[2].then(|| vec![0.0; g.cout]);
    let mut cols = vec![0.0; k * p];
    for n in 0..g.n {
        let go = &dout[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(db) = db.as_mut() {
            for (acc, plane) in db.iter_mut().zip(go.chunks_exact(p)) {
                *acc += plane.iter().sum::<f64>();
            }
        }
        if let Some(dk) = dk.as_mut() {
            im2col(&x[n * plane_in..(n + 1) * plane_in], g, &maps, &mut cols);
            // dK[co, r] += sum_p dOut[co, p] * cols[r, p]
            gemm(g.cout, p, k, go, (p, 1), &cols, (1, p), 1.0, dk);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[r, p] = sum_co K[co, r] * dOut[co, p]
            gemm(k, g.cout, p, kernel, (1, k), go, (p, 1), 0.0, &mut cols);
            col2im(&cols, g, &maps, &mut dx[n * plane_in..(n + 1) * plane_in]);
        }
    }
    ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    }
}
