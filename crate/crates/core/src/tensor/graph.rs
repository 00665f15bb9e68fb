use super::conv::{self, ConvGeom, PadMode};
use super::warp;
use super::Tensor;
use crate::error::{EicError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the input `x` and output `y`. Kinks take the left
    /// slope, so relu'(0) = 0.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    GridSample {
        image: Var,
        flow: Var,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    L1Mean {
        a: Var,
        b: Var,
    },
    L2Mean {
        a: Var,
        b: Var,
    },
    TotalVariation {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Affine {
        input: Var,
        scale: f64,
    },
    Sum {
        input: Var,
    },
    Blend {
        mask: Var,
        a: Var,
        b: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Upsample2x {
        input: Var,
    },
    Clamp01 {
        input: Var,
    },
    Roll {
        input: Var,
        dx: isize,
        dy: isize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of recorded operations. Single-owner: build, forward and backward
/// all happen through `&mut self` / `&self` on one thread.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; `None` when `var` is not a differentiable leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(EicError::dim(
            "shape",
            format!("{what}: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// 2-D cross-correlation. Output extent is `(H + 2p - kH) / stride + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let geom = ConvGeom::new(
            self.shape(input),
            self.shape(kernel),
            self.shape(bias),
            stride,
            padding,
            mode,
        )?;
        let out = conv::forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(geom.out_shape(), out)?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Backward bilinear warp: `out(p) = image(p + flow(p))`, border-clamped.
    pub fn grid_sample(&mut self, image: Var, flow: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(image).dims4()?;
        let fdims = self.value(flow).dims4()?;
        if fdims != [n, 2, h, w] {
            return Err(EicError::dim(
                "flow",
                format!("expected [{n},2,{h},{w}] for image [{n},{c},{h},{w}], got {fdims:?}"),
            ));
        }
        let out = warp::forward(
            self.value(image).data(),
            self.value(flow).data(),
            [n, c, h, w],
        );
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(&[image, flow]);
        Ok(self.push(value, Op::GridSample { image, flow }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor {
            shape: x.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[input]);
        self.push(value, Op::Act { input, kind }, rg)
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "l1_mean")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let s: f64 = x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum();
        let value = Tensor::scalar(s / x.len() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::L1Mean { a, b }, rg))
    }

    /// Mean squared difference.
    pub fn l2_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "l2_mean")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let s: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        let value = Tensor::scalar(s / x.len() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::L2Mean { a, b }, rg))
    }

    /// Anisotropic total variation of an `[N, C, H, W]` field:
    /// `mean |f(y, x+1) - f(y, x)| + mean |f(y+1, x) - f(y, x)|`, each mean
    /// taken over its own set of differences.
    pub fn total_variation(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if h < 2 {
            return Err(EicError::dim(
                "H",
                format!("total variation needs H >= 2, got {h}"),
            ));
        }
        if w < 2 {
            return Err(EicError::dim(
                "W",
                format!("total variation needs W >= 2, got {w}"),
            ));
        }
        let x = self.value(input).data();
        let (mut sh, mut sv) = (0.0, 0.0);
        for plane in x.chunks_exact(h * w) {
            for y in 0..h {
                for xx in 0..w {
                    let v = plane[y * w + xx];
                    if xx + 1 < w {
                        sh += (plane[y * w + xx + 1] - v).abs();
                    }
                    if y + 1 < h {
                        sv += (plane[(y + 1) * w + xx] - v).abs();
                    }
                }
            }
        }
        let nh = (n * c * h * (w - 1)) as f64;
        let nv = (n * c * (h - 1) * w) as f64;
        let value = Tensor::scalar(sh / nh + sv / nv);
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::TotalVariation { input }, rg))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_op(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_op(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_op(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        self.affine(input, factor, 0.0)
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let x = self.value(input);
        let value = Tensor {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|v| v * scale + shift).collect(),
        };
        let rg = self.rg(&[input]);
        self.push(value, Op::Affine { input, scale }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).data().iter().sum());
        let rg = self.rg(&[input]);
        self.push(value, Op::Sum { input }, rg)
    }

    /// `mask ⊙ a + (1 − mask) ⊙ b` with a single-channel `[N,1,H,W]` mask
    /// applied to every channel of `a` and `b`.
    pub fn blend(&mut self, mask: Var, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "blend")?;
        let [n, c, h, w] = self.value(a).dims4()?;
        let md = self.value(mask).dims4()?;
        if md != [n, 1, h, w] {
            return Err(EicError::dim(
                "mask",
                format!("expected [{n},1,{h},{w}], got {md:?}"),
            ));
        }
        let hw = h * w;
        let (m, x, y) = (
            self.value(mask).data(),
            self.value(a).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; n * c * hw];
        for bi in 0..n {
            let mp = &m[bi * hw..(bi + 1) * hw];
            for ch in 0..c {
                let o = (bi * c + ch) * hw;
                for p in 0..hw {
                    out[o + p] = mp[p] * x[o + p] + (1.0 - mp[p]) * y[o + p];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(&[mask, a, b]);
        Ok(self.push(value, Op::Blend { mask, a, b }, rg))
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| EicError::Contract("concat of zero tensors".into()))?;
        let [n, _, h, w] = self.value(*first).dims4()?;
        let mut total_c = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(EicError::dim(
                    "N/H/W",
                    format!("concat of [{vn},{vc},{vh},{vw}] onto [{n},_,{h},{w}]"),
                ));
            }
            total_c += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![n, total_c, h, w], out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Channels `start .. start + len` of an `[N, C, H, W]` tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if len == 0 || start + len > c {
            return Err(EicError::dim(
                "C",
                format!("channel slice {start}..{} of {c} channels", start + len),
            ));
        }
        let hw = h * w;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            out.extend_from_slice(&x[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        let value = Tensor::new(vec![n, len, h, w], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let x = self.value(input).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * h2 * w2];
        for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(h2 * w2)) {
            for y in 0..h2 {
                let src = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for (xx, o) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                    *o = src[xx / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h2, w2], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Upsample2x { input }, rg))
    }

    /// Hard clamp to `[0, 1]`; gradient passes through inside the range and
    /// is zero outside it.
    pub fn clamp01(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        };
        let rg = self.rg(&[input]);
        self.push(value, Op::Clamp01 { input }, rg)
    }

    /// Circular shift: content moves `dx` columns right and `dy` rows down.
    pub fn roll(&mut self, input: Var, dx: isize, dy: isize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let out = roll_planes(self.value(input).data(), n * c, h, w, dx, dy);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Roll { input, dx, dy }, rg))
    }

    /// Reverse-mode accumulation from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(EicError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data,
                })
            })
            .chain(
                // leaves created after the loss node are off the path
                self.nodes[loss.0 + 1..].iter().map(|node| {
                    (matches!(node.op, Op::Leaf) && node.requires_grad)
                        .then(|| Tensor::zeros(node.value.shape()))
                }),
            )
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let want = [rg(*input), rg(*kernel), rg(*bias)];
                let cg = conv::backward(val(*input), val(*kernel), g, geom, want);
                if let Some(d) = cg.input {
                    accumulate(&mut grads[input.0], d);
                }
                if let Some(d) = cg.kernel {
                    accumulate(&mut grads[kernel.0], d);
                }
                if let Some(d) = cg.bias {
                    accumulate(&mut grads[bias.0], d);
                }
            }
            Op::GridSample { image, flow } => {
                let dims = self.nodes[image.0]
                    .value
                    .dims4()
                    .expect("validated at build");
                let (di, df) =
                    warp::backward(val(*image), val(*flow), g, dims, rg(*image), rg(*flow));
                if let Some(d) = di {
                    accumulate(&mut grads[image.0], d);
                }
                if let Some(d) = df {
                    accumulate(&mut grads[flow.0], d);
                }
            }
            Op::Act { input, kind } => {
                let d = val(*input)
                    .iter()
                    .zip(node.value.data())
                    .zip(g)
                    .map(|((&x, &y), &gi)| gi * kind.derivative(x, y))
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::L1Mean { a, b } | Op::L2Mean { a, b } => {
                let squared = matches!(node.op, Op::L2Mean { .. });
                let (x, y) = (val(*a), val(*b));
                let s = g[0] / x.len() as f64;
                let d: Vec<f64> = x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| {
                        let diff = p - q;
                        if squared {
                            2.0 * diff * s
                        } else if diff > 0.0 {
                            s
                        } else if diff < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if rg(*b) {
                    accumulate(&mut grads[b.0], d.iter().map(|v| -v).collect());
                }
                if rg(*a) {
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::TotalVariation { input } => {
                let [n, c, h, w] = self.nodes[input.0]
                    .value
                    .dims4()
                    .expect("validated at build");
                let x = val(*input);
                let sh = g[0] / (n * c * h * (w - 1)) as f64;
                let sv = g[0] / (n * c * (h - 1) * w) as f64;
                let sign = |v: f64| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                let mut d = vec![0.0; x.len()];
                for (plane, dp) in x.chunks_exact(h * w).zip(d.chunks_exact_mut(h * w)) {
                    for y in 0..h {
                        for xx in 0..w {
                            let p = y * w + xx;
                            if xx + 1 < w {
                                let s = sign(plane[p + 1] - plane[p]) * sh;
                                dp[p + 1] += s;
                                dp[p] -= s;
                            }
                            if y + 1 < h {
                                let s = sign(plane[p + w] - plane[p]) * sv;
                                dp[p + w] += s;
                                dp[p] -= s;
                            }
                        }
                    }
                }
                accumulate(&mut grads[input.0], d);
            }
            Op::Add { a, b } => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if rg(*a) {
                    let d = g.iter().zip(val(*b)).map(|(gi, y)| gi * y).collect();
                    accumulate(&mut grads[a.0], d);
                }
                if rg(*b) {
                    let d = g.iter().zip(val(*a)).map(|(gi, x)| gi * x).collect();
                    accumulate(&mut grads[b.0], d);
                }
            }
            Op::Affine { input, scale } => {
                accumulate(&mut grads[input.0], g.iter().map(|v| v * scale).collect());
            }
            Op::Sum { input } => {
                let n = self.nodes[input.0].value.len();
                accumulate(&mut grads[input.0], vec![g[0]; n]);
            }
            Op::Blend { mask, a, b } => {
                let [n, c, h, w] = node.value.dims4().expect("validated at build");
                let hw = h * w;
                let (m, x, y) = (val(*mask), val(*a), val(*b));
                let mut dm = rg(*mask).then(|| vec![0.0; n * hw]);
                let mut da = rg(*a).then(|| vec![0.0; n * c * hw]);
                let mut db = rg(*b).then(|| vec![0.0; n * c * hw]);
                for bi in 0..n {
                    for ch in 0..c {
                        let o = (bi * c + ch) * hw;
                        for p in 0..hw {
                            let gi = g[o + p];
                            let mi = m[bi * hw + p];
                            if let Some(dm) = dm.as_mut() {
                                dm[bi * hw + p] += gi * (x[o + p] - y[o + p]);
                            }
                            if let Some(da) = da.as_mut() {
                                da[o + p] = gi * mi;
                            }
                            if let Some(db) = db.as_mut() {
                                db[o + p] = gi * (1.0 - mi);
                            }
                        }
                    }
                }
                for (v, d) in [(mask, dm), (a, da), (b, db)] {
                    if let Some(d) = d {
                        accumulate(&mut grads[v.0], d);
                    }
                }
            }
            Op::Concat { inputs } => {
                let [n, total_c, h, w] = node.value.dims4().expect("validated at build");
                let hw = h * w;
                let mut offset = 0;
                for v in inputs {
                    let c = self.nodes[v.0].value.shape()[1];
                    if rg(*v) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let s = (b * total_c + offset) * hw;
                            d.extend_from_slice(&g[s..s + c * hw]);
                        }
                        accumulate(&mut grads[v.0], d);
                    }
                    offset += c;
                }
            }
            Op::SliceChannels { input, start } => {
                let [n, c, h, w] = self.nodes[input.0]
                    .value
                    .dims4()
                    .expect("validated at build");
                let len = node.value.shape()[1];
                let hw = h * w;
                let mut d = vec![0.0; n * c * hw];
                for b in 0..n {
                    let dst = (b * c + start) * hw;
                    d[dst..dst + len * hw].copy_from_slice(&g[b * len * hw..(b + 1) * len * hw]);
                }
                accumulate(&mut grads[input.0], d);
            }
            Op::Upsample2x { input } => {
                let [_, _, h, w] = self.nodes[input.0]
                    .value
                    .dims4()
                    .expect("validated at build");
                let w2 = 2 * w;
                let mut d = vec![0.0; self.nodes[input.0].value.len()];
                for (dp, gp) in d.chunks_exact_mut(h * w).zip(g.chunks_exact(4 * h * w)) {
                    for y in 0..2 * h {
                        for x in 0..w2 {
                            dp[(y / 2) * w + x / 2] += gp[y * w2 + x];
                        }
                    }
                }
                accumulate(&mut grads[input.0], d);
            }
            Op::Clamp01 { input } => {
                let d = val(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if (0.0..=1.0).contains(&x) { gi } else { 0.0 })
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::Roll { input, dx, dy } => {
                let [n, c, h, w] = node.value.dims4().expect("validated at build");
                accumulate(&mut grads[input.0], roll_planes(g, n * c, h, w, -dx, -dy));
            }
        }
    }
}

/// Circularly shifts each `h × w` plane so content moves by `(dx, dy)`.
pub(crate) fn roll_planes(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    dx: isize,
    dy: isize,
) -> Vec<f64> {
    let mut out = vec![0.0; planes * h * w];
    let sx = dx.rem_euclid(w as isize) as usize;
    let sy = dy.rem_euclid(h as isize) as usize;
    for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for y in 0..h {
            let ty = (y + sy) % h;
            for xx in 0..w {
                dst[ty * w + (xx + sx) % w] = src[y * w + xx];
            }
        }
    }
    out
}
