//! Central finite-difference gradient checks for every graph operation.

use eic_core::error::Result;
use eic_core::tensor::{Activation, Graph, PadMode, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;
/// Denominator floor of the relative error so that components that are
/// zero up to rounding compare by absolute difference.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

pub type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn projection(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(build(inputs) ⊙ R)` for a fixed random `R`, so every output element
/// contributes with its own weight.
fn evaluate(inputs: &[Tensor], build: &Build, seed: u64, grads: bool) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let loss = if g.shape(out).is_empty() {
        out
    } else {
        let r = g.constant(projection(g.shape(out), seed));
        let prod = g.mul(out, r).unwrap();
        g.sum(prod)
    };
    let value = g.value(loss).item().unwrap();
    if !grads {
        return (value, Vec::new());
    }
    let gr = g.backward(loss).unwrap();
    (
        value,
        vars.iter().map(|&v| gr.get(v).unwrap().clone()).collect(),
    )
}

/// Largest relative error over all input coordinates, or over `probes`
/// random coordinates per input when given.
pub fn max_error(inputs: &[Tensor], build: &Build, seed: u64, probes: Option<usize>) -> f64 {
    let (_, analytic) = evaluate(inputs, build, seed, true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match probes {
            Some(p) if p < t.len() => (0..p).map(|_| rng.gen_range(0..t.len())).collect(),
            _ => (0..t.len()).collect(),
        };
        for j in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (evaluate(&plus, build, seed, false).0
                - evaluate(&minus, build, seed, false).0)
                / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
    }
    worst
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values with magnitude in `[0.1, 1]` and random sign: at least `0.1` from
/// the kink at zero.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn dims(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(3..=6),
        rng.gen_range(3..=6),
    ]
}

/// Flow whose sample points stay at least 0.1 px from integer coordinates
/// and from the image border, away from the bilinear kinks; a few points
/// fall well outside the image to exercise clamping.
fn smooth_flow(rng: &mut ChaCha8Rng, [n, _, h, w]: [usize; 4]) -> Tensor {
    let mut data = vec![0.0; n * 2 * h * w];
    for b in 0..n {
        for axis in 0..2 {
            let extent = if axis == 0 { w } else { h };
            for y in 0..h {
                for x in 0..w {
                    let base = if axis == 0 { x } else { y } as f64;
                    let target = if rng.gen_bool(0.1) {
                        if rng.gen_bool(0.5) {
                            -3.0
                        } else {
                            extent as f64 + 2.0
                        }
                    } else {
                        rng.gen_range(0..extent - 1) as f64 + rng.gen_range(0.1..0.9)
                    };
                    data[((b * 2 + axis) * h + y) * w + x] = target - base;
                }
            }
        }
    }
    Tensor::new(vec![n, 2, h, w], data).unwrap()
}

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Box<Build>,
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// One random instance of every differentiable operation.
pub fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let d = dims(rng);
    let [n, c, h, w] = d;
    let mut out = Vec::new();
    for (name, stride, padding, mode) in [
        ("conv2d/zeros/stride1", 1, 1, PadMode::Zeros),
        ("conv2d/reflect/stride1", 1, 1, PadMode::Reflect),
        ("conv2d/reflect/stride2", 2, 1, PadMode::Reflect),
        ("conv2d/valid/stride2", 2, 0, PadMode::Zeros),
    ] {
        let cout = rng.gen_range(1..=3);
        out.push(case(
            name,
            vec![
                uniform(rng, &[n, c, h, w], -1.0, 1.0),
                uniform(rng, &[cout, c, 3, 3], -1.0, 1.0),
                uniform(rng, &[cout], -1.0, 1.0),
            ],
            move |g, v| g.conv2d(v[0], v[1], v[2], stride, padding, mode),
        ));
    }
    out.push(case(
        "grid_sample",
        vec![uniform(rng, &d, 0.0, 1.0), smooth_flow(rng, d)],
        |g, v| g.grid_sample(v[0], v[1]),
    ));
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.2)),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
    ] {
        out.push(case(name, vec![off_zero(rng, &d)], move |g, v| {
            Ok(g.activation(v[0], kind))
        }));
    }
    let a = uniform(rng, &d, -1.0, 1.0);
    let mut b = off_zero(rng, &d);
    b.data_mut()
        .iter_mut()
        .zip(a.data())
        .for_each(|(x, y)| *x += y);
    out.push(case("l1_mean", vec![a.clone(), b.clone()], |g, v| {
        g.l1_mean(v[0], v[1])
    }));
    out.push(case("l2_mean", vec![a.clone(), b.clone()], |g, v| {
        g.l2_mean(v[0], v[1])
    }));
    // a strictly increasing ramp plus noise keeps every difference off zero
    let mut ramp = off_zero(rng, &d);
    for (i, v) in ramp.data_mut().iter_mut().enumerate() {
        *v = 0.05 * *v + i as f64 * ((i % 2) as f64 * 2.0 - 1.0);
    }
    out.push(case("total_variation", vec![ramp], |g, v| {
        g.total_variation(v[0])
    }));
    out.push(case("add", vec![a.clone(), b.clone()], |g, v| {
        g.add(v[0], v[1])
    }));
    out.push(case("sub", vec![a.clone(), b.clone()], |g, v| {
        g.sub(v[0], v[1])
    }));
    out.push(case("mul", vec![a.clone(), b.clone()], |g, v| {
        g.mul(v[0], v[1])
    }));
    let (s, t) = (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
    out.push(case("affine", vec![a.clone()], move |g, v| {
        Ok(g.affine(v[0], s, t))
    }));
    out.push(case("sum", vec![a.clone()], |g, v| Ok(g.sum(v[0]))));
    out.push(case(
        "blend",
        vec![uniform(rng, &[n, 1, h, w], 0.0, 1.0), a.clone(), b.clone()],
        |g, v| g.blend(v[0], v[1], v[2]),
    ));
    let c2 = rng.gen_range(1..=3);
    out.push(case(
        "concat_channels",
        vec![a.clone(), uniform(rng, &[n, c2, h, w], -1.0, 1.0)],
        |g, v| g.concat_channels(v),
    ));
    let start = rng.gen_range(0..c);
    let len = rng.gen_range(1..=c - start);
    out.push(case("slice_channels", vec![a.clone()], move |g, v| {
        g.slice_channels(v[0], start, len)
    }));
    out.push(case("upsample2x", vec![a.clone()], |g, v| {
        g.upsample2x(v[0])
    }));
    let mut cl = uniform(rng, &d, -0.5, 1.5);
    for v in cl.data_mut() {
        if v.abs() < 0.01 || (*v - 1.0).abs() < 0.01 {
            *v += 0.05;
        }
    }
    out.push(case("clamp01", vec![cl], |g, v| Ok(g.clamp01(v[0]))));
    let (dx, dy) = (rng.gen_range(-7..=7), rng.gen_range(-7..=7));
    out.push(case("roll", vec![a], move |g, v| g.roll(v[0], dx, dy)));
    out
}

/// Worst relative error per operation over `instances` random instances.
pub fn run_all(instances: usize, seed: u64) -> Vec<(&'static str, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table: Vec<(&'static str, usize, f64)> = Vec::new();
    for i in 0..instances {
        for c in op_cases(&mut rng) {
            let err = max_error(
                &c.inputs,
                c.build.as_ref(),
                seed.wrapping_add(i as u64),
                None,
            );
            match table.iter_mut().find(|r| r.0 == c.name) {
                Some(row) => {
                    row.1 += 1;
                    row.2 = row.2.max(err);
                }
                None => table.push((c.name, 1, err)),
            }
        }
    }
    table
}
