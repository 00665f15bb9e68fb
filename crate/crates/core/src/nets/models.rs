use super::params::{init_parameters, ParameterSet};
use super::unet::UNetDescriptor;
use crate::error::{EicError, Result};
use crate::synth::{stack_frames, Frame};
use crate::tensor::{Activation, Graph, Var};

/// Flow heads are squashed to `±MAX_FLOW` pixels.
pub const MAX_FLOW: f64 = 8.0;
/// Pixel-residual head range.
pub const RESIDUAL_SCALE: f64 = 0.5;

fn centered(g: &mut Graph, x: Var) -> Var {
    g.affine(x, 1.0, -0.5)
}

fn flow_head(g: &mut Graph, head: Var, start: usize) -> Result<Var> {
    let raw = g.slice_channels(head, start, 2)?;
    let t = g.activation(raw, Activation::Tanh);
    Ok(g.scale(t, MAX_FLOW))
}

/// Intermediate tensors of one interpolator forward pass.
#[derive(Clone, Copy, Debug)]
pub struct InterpOutput {
    pub frame: Var,
    pub flow_early: Var,
    pub flow_late: Var,
    pub mask: Var,
}

/// Midpoint synthesiser `Ĩ_{t-1} = f_i(I_{t-2}, I_t)`: predicts a flow toward
/// each input plus a blend mask, and mixes the two warped inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatorModel {
    net: UNetDescriptor,
    params: ParameterSet,
    channels: usize,
    frozen: bool,
}

impl InterpolatorModel {
    pub fn descriptor(channels: usize) -> UNetDescriptor {
        UNetDescriptor {
            in_channels: 2 * channels,
            head_channels: 5,
        }
    }

    pub fn new(channels: usize, seed: u64) -> Self {
        let net = Self::descriptor(channels);
        let params = init_parameters(&net.layers(), seed);
        InterpolatorModel {
            net,
            params,
            channels,
            frozen: false,
        }
    }

    pub fn from_parameters(channels: usize, params: ParameterSet) -> Result<Self> {
        let fresh = Self::new(channels, 0);
        if !fresh.params.same_layout(&params) {
            return Err(EicError::dim(
                "parameters",
                format!("layout does not match a {channels}-channel interpolator"),
            ));
        }
        Ok(InterpolatorModel { params, ..fresh })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Mutable weights; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParameterSet> {
        if self.frozen {
            return Err(EicError::Contract("interpolator is frozen".into()));
        }
        Ok(&mut self.params)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Graph forward with weights already bound as `params`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        early: Var,
        late: Var,
    ) -> Result<InterpOutput> {
        self.forward_split(g, params, early, late, early, late)
    }

    /// Like [`forward`](Self::forward), but motion is estimated from
    /// `(motion_early, motion_late)` while pixels are warped from
    /// `(early, late)`. Passing detached copies as the motion inputs stops
    /// gradients through the flow and mask estimates.
    pub fn forward_split(
        &self,
        g: &mut Graph,
        params: &[Var],
        early: Var,
        late: Var,
        motion_early: Var,
        motion_late: Var,
    ) -> Result<InterpOutput> {
        if g.shape(early) != g.shape(late) {
            return Err(EicError::dim(
                "frame",
                format!(
                    "interpolator inputs differ: {:?} vs {:?}",
                    g.shape(early),
                    g.shape(late)
                ),
            ));
        }
        let x = g.concat_channels(&[motion_early, motion_late])?;
        let x = centered(g, x);
        let head = self.net.forward(g, params, x)?;
        let flow_early = flow_head(g, head, 0)?;
        let flow_late = flow_head(g, head, 2)?;
        let mask_raw = g.slice_channels(head, 4, 1)?;
        let mask = g.activation(mask_raw, Activation::Sigmoid);
        let we = g.grid_sample(early, flow_early)?;
        let wl = g.grid_sample(late, flow_late)?;
        let mixed = g.blend(mask, we, wl)?;
        let frame = g.clamp01(mixed);
        Ok(InterpOutput {
            frame,
            flow_early,
            flow_late,
            mask,
        })
    }

    pub fn interpolate(&self, early: &Frame, late: &Frame) -> Result<Frame> {
        early.same_dims(late)?;
        let mut g = Graph::new();
        let params = self.params.bind(&mut g, false);
        let e = g.constant(early.to_tensor());
        let l = g.constant(late.to_tensor());
        let out = self.forward(&mut g, &params, e, l)?;
        Frame::from_tensor(g.value(out.frame), 0)
    }
}

/// Intermediate tensors of one extrapolator forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ExtrapOutput {
    pub frame: Var,
    pub flow: Var,
    pub residual: Var,
}

/// Hybrid next-frame predictor `Î_t = f_e(I_{t-k} .. I_{t-1})`: warps the
/// latest frame by a predicted flow and adds a bounded pixel residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolatorModel {
    net: UNetDescriptor,
    params: ParameterSet,
    k: usize,
    channels: usize,
}

impl ExtrapolatorModel {
    pub fn descriptor(k: usize, channels: usize) -> UNetDescriptor {
        UNetDescriptor {
            in_channels: k * channels,
            head_channels: 2 + channels,
        }
    }

    pub fn new(k: usize, channels: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(EicError::Config(format!(
                "extrapolator needs k >= 2, got {k}"
            )));
        }
        let net = Self::descriptor(k, channels);
        let params = init_parameters(&net.layers(), seed);
        Ok(ExtrapolatorModel {
            net,
            params,
            k,
            channels,
        })
    }

    pub fn from_parameters(k: usize, channels: usize, params: ParameterSet) -> Result<Self> {
        let fresh = Self::new(k, channels, 0)?;
        if !fresh.params.same_layout(&params) {
            return Err(EicError::dim(
                "parameters",
                format!("layout does not match a k={k}, {channels}-channel extrapolator"),
            ));
        }
        Ok(ExtrapolatorModel { params, ..fresh })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Graph forward over `k` frame tensors, oldest first.
    pub fn forward(&self, g: &mut Graph, params: &[Var], past: &[Var]) -> Result<ExtrapOutput> {
        if past.len() != self.k {
            return Err(EicError::Arity {
                what: "past frames",
                expected: self.k,
                got: past.len(),
            });
        }
        let last = *past.last().expect("k >= 2");
        let x = g.concat_channels(past)?;
        let x = centered(g, x);
        let head = self.net.forward(g, params, x)?;
        let flow = flow_head(g, head, 0)?;
        let raw = g.slice_channels(head, 2, self.channels)?;
        let t = g.activation(raw, Activation::Tanh);
        let residual = g.scale(t, RESIDUAL_SCALE);
        let warped = g.grid_sample(last, flow)?;
        let sum = g.add(warped, residual)?;
        let frame = g.clamp01(sum);
        Ok(ExtrapOutput {
            frame,
            flow,
            residual,
        })
    }

    /// Adds the past frames to `g` as constants and runs the forward pass.
    pub fn forward_frames(
        &self,
        g: &mut Graph,
        params: &[Var],
        past: &[Frame],
    ) -> Result<ExtrapOutput> {
        if past.len() != self.k {
            return Err(EicError::Arity {
                what: "past frames",
                expected: self.k,
                got: past.len(),
            });
        }
        let stacked = stack_frames(past)?;
        if stacked.shape()[1] != self.k * self.channels {
            return Err(EicError::dim(
                "C",
                format!(
                    "model expects {} channels per frame, frames have {}",
                    self.channels,
                    past[0].channels()
                ),
            ));
        }
        let vars: Vec<Var> = past.iter().map(|f| g.constant(f.to_tensor())).collect();
        self.forward(g, params, &vars)
    }
}

/// Next-frame predictors usable for rollout and evaluation.
pub trait Extrapolator: Sync {
    fn k(&self) -> usize;
    /// Channel count the model was built for; `None` accepts any.
    fn channels(&self) -> Option<usize> {
        None
    }
    fn extrapolate(&self, past: &[Frame]) -> Result<Frame>;
}

impl Extrapolator for ExtrapolatorModel {
    fn k(&self) -> usize {
        self.k
    }

    fn channels(&self) -> Option<usize> {
        Some(self.channels)
    }

    fn extrapolate(&self, past: &[Frame]) -> Result<Frame> {
        let mut g = Graph::new();
        let params = self.params.bind(&mut g, false);
        let out = self.forward_frames(&mut g, &params, past)?;
        Frame::from_tensor(g.value(out.frame), 0)
    }
}

/// Midpoint synthesisers usable inside a differentiable graph.
pub trait GraphInterpolator {
    /// Whether the weights are locked against training.
    fn is_frozen(&self) -> bool;

    /// `Ĩ_{t-1}` from `(I_{t-2}, late)` as a graph node. When
    /// `detach_motion` is set, gradients reach `late` only through the
    /// warp, not through motion estimation.
    fn interpolate_graph(
        &self,
        g: &mut Graph,
        early: Var,
        late: Var,
        detach_motion: bool,
    ) -> Result<Var>;
}

impl GraphInterpolator for InterpolatorModel {
    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn interpolate_graph(
        &self,
        g: &mut Graph,
        early: Var,
        late: Var,
        detach_motion: bool,
    ) -> Result<Var> {
        let params = self.params.bind(g, false);
        let out = if detach_motion {
            let me = g.constant(g.value(early).clone());
            let ml = g.constant(g.value(late).clone());
            self.forward_split(g, &params, early, late, me, ml)?
        } else {
            self.forward(g, &params, early, late)?
        };
        Ok(out.frame)
    }
}

fn integer_velocity(v: [f64; 2]) -> Result<[i64; 2]> {
    if v.iter().any(|c| c.fract() != 0.0 || !c.is_finite()) {
        return Err(EicError::Unsupported(format!(
            "oracle needs an integer velocity, got ({}, {})",
            v[0], v[1]
        )));
    }
    Ok([v[0] as i64, v[1] as i64])
}

/// Exact midpoint for rigid periodic motion: `early` rolled by `v`.
pub fn oracle_interpolate(early: &Frame, late: &Frame, velocity: [f64; 2]) -> Result<Frame> {
    early.same_dims(late)?;
    let [vx, vy] = integer_velocity(velocity)?;
    Ok(early.rolled(vx, vy))
}

/// Exact next frame for rigid periodic motion: `I_{t-1}` rolled by `v`.
pub fn oracle_extrapolate(past: &[Frame], velocity: [f64; 2]) -> Result<Frame> {
    let last = past.last().ok_or(EicError::Arity {
        what: "past frames",
        expected: 1,
        got: 0,
    })?;
    let [vx, vy] = integer_velocity(velocity)?;
    Ok(last.rolled(vx, vy))
}

/// Copy-last-frame baseline.
pub fn persistence_extrapolate(past: &[Frame]) -> Result<Frame> {
    past.last().cloned().ok_or(EicError::Arity {
        what: "past frames",
        expected: 1,
        got: 0,
    })
}

fn check_arity(past: &[Frame], k: usize) -> Result<()> {
    if past.len() != k {
        return Err(EicError::Arity {
            what: "past frames",
            expected: k,
            got: past.len(),
        });
    }
    Ok(())
}

/// [`oracle_extrapolate`] with a fixed `k` and known velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleExtrapolator {
    pub k: usize,
    pub velocity: [i64; 2],
}

impl Extrapolator for OracleExtrapolator {
    fn k(&self) -> usize {
        self.k
    }

    fn extrapolate(&self, past: &[Frame]) -> Result<Frame> {
        check_arity(past, self.k)?;
        oracle_extrapolate(past, [self.velocity[0] as f64, self.velocity[1] as f64])
    }
}

/// [`persistence_extrapolate`] with a fixed `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PersistenceExtrapolator {
    pub k: usize,
}

impl Extrapolator for PersistenceExtrapolator {
    fn k(&self) -> usize {
        self.k
    }

    fn extrapolate(&self, past: &[Frame]) -> Result<Frame> {
        check_arity(past, self.k)?;
        persistence_extrapolate(past)
    }
}

/// [`oracle_interpolate`] as a graph operation. Computed from the late
/// frame (`late` rolled by `−v`) so the result depends on the prediction
/// fed in as `late`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleInterpolator {
    pub velocity: [i64; 2],
}

impl GraphInterpolator for OracleInterpolator {
    fn is_frozen(&self) -> bool {
        true
    }

    fn interpolate_graph(
        &self,
        g: &mut Graph,
        early: Var,
        late: Var,
        _detach_motion: bool,
    ) -> Result<Var> {
        if g.shape(early) != g.shape(late) {
            return Err(EicError::dim("frame", "oracle inputs differ in shape"));
        }
        g.roll(late, -self.velocity[0] as isize, -self.velocity[1] as isize)
    }
}
