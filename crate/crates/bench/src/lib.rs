//! Fixtures shared by the benchmarks.

use eic_core::synth::Frame;
use eic_core::tensor::Tensor;

/// Deterministic smooth test frames of side `side`, one per index.
pub fn frames(count: usize, side: usize) -> Vec<Frame> {
    (0..count)
        .map(|t| {
            let px = (0..side * side)
                .map(|i| {
                    let (y, x) = ((i / side) as f64, (i % side) as f64 - t as f64);
                    0.5 + 0.3 * (0.2 * x).sin() * (0.15 * y).cos()
                })
                .collect();
            Frame::new(side, side, 1, px).expect("valid frame")
        })
        .collect()
}

/// `[1, channels, side, side]` tensor with values in `[-1, 1]`.
pub fn field(channels: usize, side: usize, phase: f64) -> Tensor {
    let n = channels * side * side;
    let data = (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect();
    Tensor::new(vec![1, channels, side, side], data).expect("valid tensor")
}
