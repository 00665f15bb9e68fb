mod support;

use eic_core::error::EicError;
use eic_core::nets::*;
use eic_core::synth::*;
use eic_core::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradcheck;

fn rigid_clip(v: [i64; 2], seed: u64, frames: usize, side: usize) -> VideoClip {
    let spec = MotionSpec {
        boundary: Boundary::Periodic,
        background: Background::Flat { level: vec![0.15] },
        objects: vec![
            SceneObject {
                shape: Shape::TexturedPatch {
                    width: 7,
                    height: 6,
                    cell: 2,
                    contrast: 0.5,
                },
                color: vec![0.6],
                position: [2, 3],
                velocity: v,
            },
            SceneObject {
                shape: Shape::Disk { radius: 3 },
                color: vec![0.9],
                position: [side as i64 / 2, side as i64 / 2],
                velocity: v,
            },
        ],
    };
    generate_clip(&spec, seed, frames, side, side).unwrap()
}

fn random_frame(rng: &mut ChaCha8Rng, side: usize, c: usize) -> Frame {
    Frame::new(
        side,
        side,
        c,
        (0..side * side * c)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect(),
    )
    .unwrap()
}

#[test]
fn interpolator_output_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (side, c) in [(64, 1), (32, 3)] {
        let m = InterpolatorModel::new(c, 5);
        let out = m
            .interpolate(
                &random_frame(&mut rng, side, c),
                &random_frame(&mut rng, side, c),
            )
            .unwrap();
        assert_eq!(out.dims(), (side, side, c));
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let m = InterpolatorModel::new(1, 5);
    let a = Frame::filled(32, 32, 1, 0.2).unwrap();
    let b = Frame::filled(16, 16, 1, 0.2).unwrap();
    assert!(matches!(
        m.interpolate(&a, &b),
        Err(EicError::Dimension { .. })
    ));
    // sides must be divisible by the total downsampling factor
    let odd = Frame::filled(24, 24, 1, 0.2).unwrap();
    assert!(m.interpolate(&odd, &odd).is_err());
}

#[test]
fn initial_mask_is_near_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = InterpolatorModel::new(1, 3);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let a = g.constant(random_frame(&mut rng, 32, 1).to_tensor());
    let b = g.constant(random_frame(&mut rng, 32, 1).to_tensor());
    let out = m.forward(&mut g, &p, a, b).unwrap();
    let mask = g.value(out.mask).data();
    let mean = mask.iter().sum::<f64>() / mask.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "mean mask {mean}");
    for flow in [out.flow_early, out.flow_late] {
        assert!(g.value(flow).data().iter().all(|v| v.abs() <= MAX_FLOW));
    }
}

#[test]
fn extrapolator_contract_and_arity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = ExtrapolatorModel::new(6, 1, 9).unwrap();
    let past: Vec<Frame> = (0..6).map(|_| random_frame(&mut rng, 32, 1)).collect();
    let out = m.extrapolate(&past).unwrap();
    assert_eq!(out.dims(), (32, 32, 1));
    assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(matches!(
        m.extrapolate(&past[..5]),
        Err(EicError::Arity {
            expected: 6,
            got: 5,
            ..
        })
    ));
    assert!(ExtrapolatorModel::new(1, 1, 0).is_err());
    assert_eq!(m.k(), 6);

    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let vars: Vec<Var> = past.iter().map(|f| g.constant(f.to_tensor())).collect();
    let o = m.forward(&mut g, &p, &vars).unwrap();
    assert_eq!(g.shape(o.flow), &[1, 2, 32, 32]);
    assert!(g.value(o.flow).data().iter().all(|v| v.abs() <= MAX_FLOW));
    assert!(g
        .value(o.residual)
        .data()
        .iter()
        .all(|v| v.abs() <= RESIDUAL_SCALE));
}

#[test]
fn oracles_reproduce_rigid_clips_exactly() {
    for (i, v) in [[0, 0], [1, 0], [-2, 1], [3, -2], [0, 4]]
        .into_iter()
        .enumerate()
    {
        let clip = rigid_clip(v, i as u64, 9, 32);
        let vf = [v[0] as f64, v[1] as f64];
        for t in 2..clip.len() {
            let mid = oracle_interpolate(&clip.frames[t - 2], &clip.frames[t], vf).unwrap();
            assert_eq!(mid, clip.frames[t - 1]);
        }
        for t in 6..clip.len() {
            let next = oracle_extrapolate(&clip.frames[t - 6..t], vf).unwrap();
            assert_eq!(next, clip.frames[t]);
            let o = OracleExtrapolator { k: 6, velocity: v };
            assert_eq!(
                o.extrapolate(&clip.frames[t - 6..t]).unwrap(),
                clip.frames[t]
            );
        }
    }
}

#[test]
fn oracle_special_cases() {
    let clip = rigid_clip([1, 0], 0, 3, 16);
    let (a, b) = (&clip.frames[0], &clip.frames[2]);
    assert_eq!(&oracle_interpolate(a, b, [0.0, 0.0]).unwrap(), a);
    assert_eq!(
        oracle_interpolate(a, b, [1.0, 0.0]).unwrap(),
        b.rolled(-1, 0)
    );
    assert!(matches!(
        oracle_interpolate(a, b, [0.5, 0.0]),
        Err(EicError::Unsupported(_))
    ));
    assert!(matches!(
        oracle_extrapolate(&clip.frames, [0.0, 1.5]),
        Err(EicError::Unsupported(_))
    ));
    assert_eq!(
        &oracle_extrapolate(&clip.frames, [0.0, 0.0]).unwrap(),
        &clip.frames[2]
    );
    assert!(oracle_extrapolate(&[], [0.0, 0.0]).is_err());
    let o = OracleExtrapolator {
        k: 3,
        velocity: [1, 0],
    };
    assert!(matches!(
        o.extrapolate(&clip.frames[..2]),
        Err(EicError::Arity { .. })
    ));
}

#[test]
fn graph_oracle_interpolator_matches_frame_oracle() {
    let clip = rigid_clip([2, -1], 4, 3, 32);
    let mut g = Graph::new();
    let e = g.constant(clip.frames[0].to_tensor());
    let l = g.param(clip.frames[2].to_tensor());
    let o = OracleInterpolator { velocity: [2, -1] };
    assert!(o.is_frozen());
    let mid = o.interpolate_graph(&mut g, e, l, false).unwrap();
    assert_eq!(Frame::from_tensor(g.value(mid), 0).unwrap(), clip.frames[1]);
}

#[test]
fn persistence_baseline() {
    let clip = rigid_clip([0, 0], 0, 7, 16);
    let p = PersistenceExtrapolator { k: 6 };
    let out = p.extrapolate(&clip.frames[..6]).unwrap();
    assert_eq!(out, clip.frames[5]);
    assert_eq!(out, clip.frames[6], "static clip is predicted exactly");
    assert!(p.extrapolate(&clip.frames[..5]).is_err());
    assert_eq!(
        persistence_extrapolate(&clip.frames[..2]).unwrap(),
        clip.frames[1]
    );
}

#[test]
fn initialisation_is_seeded_and_bounded() {
    let net = ExtrapolatorModel::descriptor(6, 1);
    let a = init_parameters(&net.layers(), 7);
    let b = init_parameters(&net.layers(), 7);
    let c = init_parameters(&net.layers(), 8);
    assert_eq!(a, b);
    assert_ne!(a.checksum(), c.checksum());
    assert_eq!(a.names().collect::<Vec<_>>(), b.names().collect::<Vec<_>>());
    for layer in net.layers() {
        let w = a.get(&format!("{}.weight", layer.name)).unwrap();
        let fan_in = (layer.in_channels * 9) as f64;
        let bound = (6.0 / fan_in).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound), "{}", layer.name);
        let bias = a.get(&format!("{}.bias", layer.name)).unwrap();
        assert!(bias.data().iter().all(|&v| v == 0.0));
    }
    let widths: Vec<usize> = net
        .layers()
        .iter()
        .take(4)
        .map(|l| l.out_channels)
        .collect();
    assert_eq!(widths, WIDTHS);
    assert!(net.layers().iter().take(4).all(|l| l.stride == 2));
}

#[test]
fn parameter_set_invariants() {
    let mut p = ParameterSet::new();
    p.push("a", Tensor::zeros(&[2])).unwrap();
    assert!(p.push("a", Tensor::zeros(&[1])).is_err());
    p.push("b", Tensor::full(&[1, 2], 0.5)).unwrap();
    assert_eq!(p.names().collect::<Vec<_>>(), ["a", "b"]);
    assert_eq!(p.num_values(), 4);
    let before = p.checksum();
    p.tensors_mut().next().unwrap().data_mut()[0] = 1e-30;
    assert_ne!(p.checksum(), before);
}

#[test]
fn frozen_interpolator_refuses_mutation() {
    let mut m = InterpolatorModel::new(1, 0);
    assert!(m.params_mut().is_ok());
    m.freeze();
    assert!(matches!(m.params_mut(), Err(EicError::Contract(_))));
}

#[test]
fn interpolator_passes_gradient_to_the_late_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = InterpolatorModel::new(1, 11);
    let (a, b, target) = (
        random_frame(&mut rng, 32, 1),
        random_frame(&mut rng, 32, 1),
        random_frame(&mut rng, 32, 1),
    );
    for detach in [false, true] {
        let mut g = Graph::new();
        let e = g.constant(a.to_tensor());
        let l = g.param(b.to_tensor());
        let t = g.constant(target.to_tensor());
        let mid = m.interpolate_graph(&mut g, e, l, detach).unwrap();
        let loss = g.l1_mean(mid, t).unwrap();
        let grad = g.backward(loss).unwrap();
        let norm: f64 = grad.get(l).unwrap().data().iter().map(|v| v.abs()).sum();
        assert!(norm > 0.0, "detach = {detach}");
    }
}

/// Directional finite-difference check of a whole network: the analytic
/// gradient projected on a random unit direction against the central difference
/// of the loss along it.
fn directional_error(
    build: &dyn Fn(&mut Graph, &[Var]) -> eic_core::error::Result<Var>,
    params: &ParameterSet,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<Tensor> = params
        .tensors()
        .map(|t| gradcheck::uniform(&mut rng, t.shape(), -1.0, 1.0))
        .collect();
    let norm = dir
        .iter()
        .flat_map(|d| d.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    dir.iter_mut()
        .for_each(|d| d.data_mut().iter_mut().for_each(|v| *v /= norm));
    let eval = |offset: f64| -> (f64, Option<Vec<Tensor>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = params
            .tensors()
            .zip(&dir)
            .map(|(t, d)| {
                let mut t = t.clone();
                t.data_mut()
                    .iter_mut()
                    .zip(d.data())
                    .for_each(|(v, dv)| *v += offset * dv);
                g.param(t)
            })
            .collect();
        let loss = build(&mut g, &vars).unwrap();
        let value = g.value(loss).item().unwrap();
        if offset != 0.0 {
            return (value, None);
        }
        let gr = g.backward(loss).unwrap();
        (
            value,
            Some(vars.iter().map(|&v| gr.get(v).unwrap().clone()).collect()),
        )
    };
    let (_, grads) = eval(0.0);
    let analytic: f64 = grads
        .unwrap()
        .iter()
        .zip(&dir)
        .map(|(g, d)| {
            g.data()
                .iter()
                .zip(d.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();
    let numeric = (eval(gradcheck::STEP).0 - eval(-gradcheck::STEP).0) / (2.0 * gradcheck::STEP);
    gradcheck::relative_error(analytic, numeric)
}

/// Bilinear warping has kinks at integer displacements and freshly
/// initialised flow heads sit on them; biasing the flow channels to a
/// fractional displacement keeps the finite differences on one side.
fn off_grid(params: &ParameterSet, flow_channels: usize) -> ParameterSet {
    let mut p = params.clone();
    let bias = (0.37 / MAX_FLOW).atanh();
    let names: Vec<String> = p.names().map(String::from).collect();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        if name == "head.bias" {
            t.data_mut()[..flow_channels]
                .iter_mut()
                .for_each(|b| *b = bias);
        }
    }
    p
}

#[test]
fn networks_pass_directional_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: [f64; 2] = [0.0; 2];
    for i in 0..gradcheck::INSTANCES as u64 {
        let past: Vec<Tensor> = (0..3)
            .map(|_| random_frame(&mut rng, 16, 1).to_tensor())
            .collect();
        let target = random_frame(&mut rng, 16, 1).to_tensor();

        let ex = ExtrapolatorModel::new(3, 1, i).unwrap();
        let build = |g: &mut Graph, p: &[Var]| {
            let vars: Vec<Var> = past.iter().map(|t| g.constant(t.clone())).collect();
            let out = ex.forward(g, p, &vars)?;
            let t = g.constant(target.clone());
            g.l2_mean(out.frame, t)
        };
        worst[0] = worst[0].max(directional_error(
            &build,
            &off_grid(ex.params(), 2),
            100 + i,
        ));

        let ip = InterpolatorModel::new(1, i);
        let build = |g: &mut Graph, p: &[Var]| {
            let (a, b) = (g.constant(past[0].clone()), g.constant(past[2].clone()));
            let out = ip.forward(g, p, a, b)?;
            let t = g.constant(past[1].clone());
            g.l2_mean(out.frame, t)
        };
        worst[1] = worst[1].max(directional_error(
            &build,
            &off_grid(ip.params(), 4),
            200 + i,
        ));
    }
    assert!(
        worst[0] < gradcheck::TOLERANCE,
        "extrapolator: {:e}",
        worst[0]
    );
    assert!(
        worst[1] < gradcheck::TOLERANCE,
        "interpolator: {:e}",
        worst[1]
    );
}

#[test]
fn checkpoint_entries_round_trip_and_detect_corruption() {
    let m = ExtrapolatorModel::new(6, 1, 3).unwrap();
    let bytes = encode_entries(m.params().iter()).unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let back = decode_entries(&bytes).unwrap();
    let names: Vec<&str> = m.params().names().collect();
    assert_eq!(
        back.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        names
    );
    for ((_, t), orig) in back.iter().zip(m.params().tensors()) {
        assert_eq!(t.shape(), orig.shape());
        for (a, b) in t.data().iter().zip(orig.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
    // re-encoding decoded values reproduces the bytes
    assert_eq!(
        encode_entries(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap(),
        bytes
    );

    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(
        decode_entries(&bad),
        Err(EicError::Format { offset: 0, .. })
    ));
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    match decode_entries(&bad) {
        Err(EicError::Format { detail, .. }) => {
            assert!(detail.to_lowercase().contains("crc"), "{detail}")
        }
        other => panic!("{other:?}"),
    }
    assert!(decode_entries(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(decode_entries(&extra).is_err());
}

#[test]
fn from_parameters_checks_layout() {
    let ex = ExtrapolatorModel::new(6, 1, 0).unwrap();
    assert!(ExtrapolatorModel::from_parameters(6, 1, ex.params().clone()).is_ok());
    assert!(ExtrapolatorModel::from_parameters(5, 1, ex.params().clone()).is_err());
    assert!(InterpolatorModel::from_parameters(1, ex.params().clone()).is_err());
}
