use super::params::{LayerSpec, KERNEL};
use crate::error::{EicError, Result};
use crate::tensor::{Activation, Graph, PadMode, Var};

/// Channel widths of the four encoder levels.
pub const WIDTHS: [usize; 4] = [16, 32, 64, 64];
/// Total downsampling factor; frame sides must be multiples of it.
pub const DOWNSAMPLE: usize = 16;
const SLOPE: f64 = 0.2;

/// Small encoder–decoder: four stride-2 conv blocks, four
/// upsample + conv blocks with skip connections, and a 3×3 output head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetDescriptor {
    pub in_channels: usize,
    pub head_channels: usize,
}

impl UNetDescriptor {
    pub fn layers(&self) -> Vec<LayerSpec> {
        let [w0, w1, w2, w3] = WIDTHS;
        let l = |name: &str, cin, cout, stride, is_head| LayerSpec {
            name: name.to_string(),
            in_channels: cin,
            out_channels: cout,
            stride,
            is_head,
        };
        vec![
            l("enc1", self.in_channels, w0, 2, false),
            l("enc2", w0, w1, 2, false),
            l("enc3", w1, w2, 2, false),
            l("enc4", w2, w3, 2, false),
            l("dec3", w3 + w2, w2, 1, false),
            l("dec2", w2 + w1, w1, 1, false),
            l("dec1", w1 + w0, w0, 1, false),
            l("dec0", w0 + self.in_channels, w0, 1, false),
            l("head", w0, self.head_channels, 1, true),
        ]
    }

    /// Runs the network on `input` (`[N, in_channels, H, W]`) with weights
    /// `params` bound in [`UNetDescriptor::layers`] order (weight, bias).
    pub fn forward(&self, g: &mut Graph, params: &[Var], input: Var) -> Result<Var> {
        let layers = self.layers();
        if params.len() != 2 * layers.len() {
            return Err(EicError::Arity {
                what: "parameter tensors",
                expected: 2 * layers.len(),
                got: params.len(),
            });
        }
        let [_, c, h, w] = g.value(input).dims4()?;
        if c != self.in_channels {
            return Err(EicError::dim(
                "C",
                format!(
                    "network expects {} input channels, got {c}",
                    self.in_channels
                ),
            ));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(EicError::dim(
                "H/W",
                format!("frame sides must be multiples of {DOWNSAMPLE}, got {h}x{w}"),
            ));
        }
        let pad = KERNEL / 2;
        let conv = |g: &mut Graph, i: usize, x: Var, act: bool| -> Result<Var> {
            let y = g.conv2d(
                x,
                params[2 * i],
                params[2 * i + 1],
                layers[i].stride,
                pad,
                PadMode::Reflect,
            )?;
            Ok(if act {
                g.activation(y, Activation::LeakyRelu(SLOPE))
            } else {
                y
            })
        };
        let e1 = conv(g, 0, input, true)?;
        let e2 = conv(g, 1, e1, true)?;
        let e3 = conv(g, 2, e2, true)?;
        let e4 = conv(g, 3, e3, true)?;
        let mut x = e4;
        for (i, skip) in [(4, e3), (5, e2), (6, e1), (7, input)] {
            let up = g.upsample2x(x)?;
            let cat = g.concat_channels(&[up, skip])?;
            x = conv(g, i, cat, true)?;
        }
        conv(g, 8, x, false)
    }
}
