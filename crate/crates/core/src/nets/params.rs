use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EicError, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Named, shaped weights in a fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(EicError::Contract(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds every entry to `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), trainable))
            .collect()
    }

    /// CRC32 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }
}

/// One 3×3 convolution layer of an architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Output layers are initialised with a reduced range.
    pub is_head: bool,
}

pub const KERNEL: usize = 3;

/// Weight range multiplier for output heads, so initial flows and residuals
/// start near zero.
pub const HEAD_GAIN: f64 = 0.1;

/// Fan-in scaled uniform initialisation: weights in
/// `±gain·sqrt(6 / fan_in)` with `fan_in = C_in·3·3`, all biases zero.
pub fn init_parameters(layers: &[LayerSpec], seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    for layer in layers {
        let fan_in = layer.in_channels * KERNEL * KERNEL;
        let gain = if layer.is_head { HEAD_GAIN } else { 1.0 };
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        let shape = vec![layer.out_channels, layer.in_channels, KERNEL, KERNEL];
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        params
            .push(
                format!("{}.weight", layer.name),
                Tensor::new(shape, w).expect("positive dims"),
            )
            .expect("layer names are unique");
        params
            .push(
                format!("{}.bias", layer.name),
                Tensor::zeros(&[layer.out_channels]),
            )
            .expect("layer names are unique");
    }
    params
}
