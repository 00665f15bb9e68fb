//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria that fail are reported, not hidden; the process exits
//! non-zero only when the harness itself breaks.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use eic_core::error::EicError;
use eic_core::eval::{evaluate_run, psnr, ssim, EvalConfig, MetricsReport, PSNR_CAP_DB, SSIM_K1};
use eic_core::losses::eic_loss;
use eic_core::nets::{
    decode_entries, oracle_extrapolate, oracle_interpolate, ExtrapolatorModel, InterpolatorModel,
    OracleExtrapolator, OracleInterpolator,
};
use eic_core::synth::{
    generate_clip, generate_dataset, load_clip, load_dataset, save_clip, save_dataset, window_all,
    window_samples, Background, Boundary, DataConfig, Frame, MotionSpec, SceneObject, Shape,
    VideoClip,
};
use eic_core::tensor::Graph;
use eic_core::trainer::{
    load_extrapolator, median, train_extrapolator, train_extrapolator_baseline, train_interpolator,
    ModelKind, TrainCheckpoint, TrainConfig, TrainData, TrainOptions,
};
use support::{fixtures, gradcheck};

/// Seeds of the reference recipe's extrapolator runs.
const SEEDS: [u64; 3] = [11, 12, 13];
/// Interpolator quality bound on held-out rigid clips.
const INTERP_BOUND_DB: f64 = 35.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(id: &str, name: &str, run: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!(
        "{} [{id}] {name}: {} ({:.1} s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        t0.elapsed().as_secs_f64()
    );
    v.pass
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_json<T: serde::de::DeserializeOwned>(name: &str) -> T {
    let path = configs_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Generates a clip set and reads it back from disk, so training sees the
/// same 32-bit values as the command-line pipeline.
fn materialise(cfg: &DataConfig, dir: &Path) -> Vec<VideoClip> {
    save_dataset(&generate_dataset(cfg).unwrap(), dir).unwrap();
    load_dataset(dir).unwrap()
}

fn gradient_checks() -> Verdict {
    let t0 = Instant::now();
    let table = gradcheck::run_all(gradcheck::INSTANCES, 2024);
    let elapsed = t0.elapsed();
    let worst = table.iter().map(|r| r.2).fold(0.0, f64::max);
    let failing: Vec<String> = table
        .iter()
        .filter(|r| r.1 < gradcheck::INSTANCES || r.2.is_nan() || r.2 >= gradcheck::TOLERANCE)
        .map(|r| format!("{} ({} instances, {:.2e})", r.0, r.1, r.2))
        .collect();
    let fast = elapsed < Duration::from_secs(120);
    verdict(
        failing.is_empty() && fast,
        format!(
            "{} ops x {} instances, worst relative error {worst:.2e}, {:.1} s{}",
            table.len(),
            gradcheck::INSTANCES,
            elapsed.as_secs_f64(),
            if failing.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failing.join(", "))
            }
        ),
    )
}

fn metric_oracles() -> Verdict {
    let x = Frame::new(
        32,
        32,
        1,
        (0..1024)
            .map(|i| 0.3 + 0.4 * ((i * 7919) % 1000) as f64 / 1000.0)
            .collect(),
    )
    .unwrap();
    let y = Frame::new(32, 32, 1, x.pixels().iter().map(|v| v + 0.1).collect()).unwrap();
    let zero = Frame::filled(32, 32, 1, 0.0).unwrap();
    let one = Frame::filled(32, 32, 1, 1.0).unwrap();
    let c1 = SSIM_K1 * SSIM_K1;
    let checks = [
        ("psnr(x,x)", psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB, 0.0),
        ("psnr offset 0.1", psnr(&y, &x, 1.0).unwrap(), 20.0, 1e-9),
        ("ssim(x,x)", ssim(&x, &x).unwrap(), 1.0, 1e-12),
        (
            "ssim(0,1)",
            ssim(&zero, &one).unwrap(),
            c1 / (1.0 + c1),
            1e-9,
        ),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|c| (c.1 - c.2).is_nan() || (c.1 - c.2).abs() > c.3)
        .map(|c| format!("{} = {} (want {})", c.0, c.1, c.2))
        .collect();
    let detail = checks
        .iter()
        .map(|c| format!("{} = {:.12}", c.0, c.1))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            detail
        } else {
            bad.join("; ")
        },
    )
}

fn oracle_cycle_closure() -> Verdict {
    let clips = fixtures::rigid_clips(3003, 50, 10, 32);
    let (mut windows, mut nonzero, mut records, mut uncapped) = (0usize, 0usize, 0usize, 0usize);
    for clip in &clips {
        let v = clip.motion_spec.uniform_velocity().expect("rigid clip");
        let vf = [v[0] as f64, v[1] as f64];
        for w in window_all(std::slice::from_ref(clip), 6, 1, 1).unwrap() {
            let pred = oracle_extrapolate(w.past, vf).unwrap();
            // the frame oracle and the graph oracle must agree with the loss
            let mid = oracle_interpolate(&w.past[4], &pred, vf).unwrap();
            let mut g = Graph::new();
            let tm2 = g.constant(w.past[4].to_tensor());
            let tm1 = g.constant(w.past[5].to_tensor());
            let p = g.constant(pred.to_tensor());
            let l = eic_loss(
                &mut g,
                &OracleInterpolator { velocity: v },
                p,
                tm2,
                tm1,
                false,
            )
            .unwrap();
            if g.value(l).item().unwrap() != 0.0 || mid != w.past[5] {
                nonzero += 1;
            }
            windows += 1;
        }
        let model = OracleExtrapolator { k: 6, velocity: v };
        let rep = evaluate_run(&model, std::slice::from_ref(clip), &EvalConfig::default()).unwrap();
        records += rep.records.len();
        uncapped += rep
            .records
            .iter()
            .filter(|r| r.psnr_db != PSNR_CAP_DB)
            .count();
        assert_eq!(rep.max_horizon(), 4);
    }
    verdict(
        nonzero == 0 && uncapped == 0 && records > 0,
        format!(
            "{} clips: L_EIC = 0 on {}/{windows} windows, capped PSNR on {}/{records} records (h = 1..4)",
            clips.len(),
            windows - nonzero,
            records - uncapped
        ),
    )
}

fn format_round_trips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();

    let spec = MotionSpec {
        boundary: Boundary::Bounce,
        background: Background::Textured {
            base: 0.4,
            contrast: 0.3,
            cell: 4,
        },
        objects: vec![SceneObject {
            shape: Shape::Disk { radius: 5 },
            color: vec![0.9, 0.1, 0.5],
            position: [10, 12],
            velocity: [2, -1],
        }],
    };
    let mut clips = vec![generate_clip(&spec, 9, 6, 32, 48).unwrap()];
    clips.extend(fixtures::rigid_clips(8, 2, 5, 32));
    for clip in &clips {
        let path = dir.path().join(format!("{}.eicv", clip.id));
        save_clip(clip, &path).unwrap();
        let back = load_clip(&path).unwrap();
        let expect: Vec<Frame> = clip.frames.iter().map(Frame::quantized_f32).collect();
        if back.frames != expect || back.motion_spec != clip.motion_spec || back.seed != clip.seed {
            problems.push(format!("{} does not round-trip", clip.id));
        }
        let again = dir.path().join("again.eicv");
        save_clip(&back, &again).unwrap();
        if std::fs::read(&path).unwrap() != std::fs::read(&again).unwrap() {
            problems.push(format!("{} bytes differ after reload", clip.id));
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&again, &bytes).unwrap();
        std::fs::copy(
            eic_core::synth::sidecar_path(&path),
            eic_core::synth::sidecar_path(&again),
        )
        .unwrap();
        if !matches!(load_clip(&again), Err(EicError::Format { offset: 0, .. })) {
            problems.push("corrupted clip magic accepted".into());
        }
    }

    let model = ExtrapolatorModel::new(6, 1, 4).unwrap();
    let mut interp = InterpolatorModel::new(3, 5);
    interp.freeze();
    for (kind, params, channels) in [
        (ModelKind::Extrapolator, model.params().clone(), 1),
        (ModelKind::Interpolator, interp.params().clone(), 3),
    ] {
        let ck = TrainCheckpoint {
            kind,
            k: if kind == ModelKind::Extrapolator {
                6
            } else {
                2
            },
            channels,
            epoch: 4,
            step: 99,
            lambda: 0.1,
            params,
            optimizer: None,
        };
        let path = dir.path().join("model.eick");
        ck.save(&path).unwrap();
        let back = TrainCheckpoint::load(&path).unwrap();
        let exact = back
            .params
            .tensors()
            .zip(ck.params.tensors())
            .all(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| *x == *y as f32 as f64)
            });
        if !exact || back.kind != kind || back.step != 99 {
            problems.push(format!("{kind:?} checkpoint does not round-trip"));
        }
        back.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        if bytes != ck.to_bytes().unwrap() {
            problems.push(format!("{kind:?} checkpoint bytes differ after reload"));
        }
        let mut bad = bytes.clone();
        bad[2] ^= 0xff;
        if !matches!(
            decode_entries(&bad),
            Err(EicError::Format { offset: 0, .. })
        ) {
            problems.push("corrupted checkpoint magic accepted".into());
        }
        let mut bad = bytes.clone();
        let i = bytes.len() - 40;
        bad[i] ^= 0x01;
        match TrainCheckpoint::from_bytes(&bad) {
            Err(EicError::Format { detail, .. }) if detail.to_lowercase().contains("crc") => {}
            other => problems.push(format!("payload bit flip gave {:?}", other.err())),
        }
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} clips and 2 checkpoints bit-exact; bad magic and CRC rejected",
                clips.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn strip_wall_ms(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn baseline_equivalence(train: &[VideoClip], val: &[VideoClip]) -> Verdict {
    let t0 = Instant::now();
    let mut cfg: TrainConfig = read_json("train_extrap_baseline.json");
    cfg.lambda = 0.0;
    cfg.epochs = 2;
    cfg.checkpoint_every = 1;
    let mut interp = InterpolatorModel::new(1, 77);
    interp.freeze();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let data = TrainData { train, val };
    let opts = |d: &tempfile::TempDir| TrainOptions {
        out_dir: Some(d.path().to_path_buf()),
        ..TrainOptions::default()
    };
    let (a, la) = train_extrapolator(&cfg, data, Some(&interp), &opts(&da)).unwrap();
    let (b, lb) = train_extrapolator_baseline(&cfg, data, &opts(&db)).unwrap();
    let mut diffs = Vec::new();
    if a.params() != b.params() {
        diffs.push("parameters".to_string());
    }
    if la.deterministic_csv() != lb.deterministic_csv() || la.epochs != lb.epochs {
        diffs.push("in-memory logs".into());
    }
    for name in ["epoch_0001.eick", "final.eick", "val_log.csv"] {
        if std::fs::read(da.path().join(name)).unwrap()
            != std::fs::read(db.path().join(name)).unwrap()
        {
            diffs.push(name.into());
        }
    }
    let read =
        |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("train_log.csv")).unwrap();
    if strip_wall_ms(&read(&da)) != strip_wall_ms(&read(&db)) {
        diffs.push("train_log.csv".into());
    }
    let elapsed = t0.elapsed();
    let fast = elapsed < Duration::from_secs(600);
    verdict(
        diffs.is_empty() && fast,
        format!(
            "{} steps over {} epochs: {}; {:.1} s",
            la.steps.len(),
            cfg.epochs,
            if diffs.is_empty() {
                "checkpoints and logs identical".to_string()
            } else {
                format!("differs in {}", diffs.join(", "))
            },
            elapsed.as_secs_f64()
        ),
    )
}

/// Per-horizon medians of one report.
fn medians(r: &MetricsReport) -> Vec<f64> {
    r.summary().iter().map(|s| s.psnr_median).collect()
}

struct Reference {
    baseline: Vec<Vec<f64>>,
    eic: Vec<Vec<f64>>,
    elapsed: Duration,
    interp_checksums: (u32, u32),
    interp_psnr: f64,
    /// Records produced from extrapolator checkpoints with no interpolator
    /// on disk.
    eval_records: usize,
}

/// Runs the pinned recipe; `setup` is the time already spent generating
/// its data.
fn reference_recipe(
    train: &[VideoClip],
    val: &[VideoClip],
    test: &[VideoClip],
    setup: Duration,
) -> Reference {
    let t0 = Instant::now();
    let data = TrainData { train, val };
    let icfg: TrainConfig = read_json("train_interp.json");
    let (interp, _) = train_interpolator(&icfg, data, &TrainOptions::default()).unwrap();
    let before = interp.params().checksum();
    let interp_psnr = interpolator_vs_oracle(&interp, test);
    println!(
        "      interpolator trained: {interp_psnr:.2} dB against the oracle on held-out clips"
    );

    let bcfg: TrainConfig = read_json("train_extrap_baseline.json");
    let ecfg: TrainConfig = read_json("train_extrap_eic.json");
    let eval = EvalConfig::default();
    let (mut baseline, mut eic) = (Vec::new(), Vec::new());
    let mut eval_records = 0;
    for seed in SEEDS {
        let b = TrainConfig {
            seed,
            ..bcfg.clone()
        };
        let e = TrainConfig {
            seed,
            ..ecfg.clone()
        };
        let (mb, _) = train_extrapolator_baseline(&b, data, &TrainOptions::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            out_dir: Some(out.path().to_path_buf()),
            ..TrainOptions::default()
        };
        train_extrapolator(&e, data, Some(&interp), &opts).unwrap();
        // inference from the checkpoint alone; nothing else is on disk
        let me = load_extrapolator(&out.path().join("final.eick")).unwrap();
        let rb = evaluate_run(&mb, test, &eval).unwrap();
        let re = evaluate_run(&me, test, &eval)
            .unwrap_or_else(|e| panic!("checkpoint-only evaluation failed: {e}"));
        eval_records += re.records.len();
        let (mb, me) = (medians(&rb), medians(&re));
        println!(
            "      seed {seed}: baseline {} | eic {} ({:.0} s elapsed)",
            fmt_row(&mb),
            fmt_row(&me),
            (setup + t0.elapsed()).as_secs_f64()
        );
        baseline.push(mb);
        eic.push(me);
    }
    Reference {
        baseline,
        eic,
        elapsed: setup + t0.elapsed(),
        interp_checksums: (before, interp.params().checksum()),
        interp_psnr,
        eval_records,
    }
}

fn fmt_row(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mean PSNR of the interpolator against the exact midpoint on every
/// triplet of rigid test clips.
fn interpolator_vs_oracle(interp: &InterpolatorModel, clips: &[VideoClip]) -> f64 {
    let mut scores = Vec::new();
    for clip in clips {
        let Some(v) = clip.motion_spec.uniform_velocity() else {
            continue;
        };
        let vf = [v[0] as f64, v[1] as f64];
        for w in window_samples(clip, 2, 1, 1).unwrap().windows {
            let truth = oracle_interpolate(&w.past[0], &w.targets[0], vf).unwrap();
            let mid = interp.interpolate(&w.past[0], &w.targets[0]).unwrap();
            scores.push(psnr(&mid, &truth, 1.0).unwrap());
        }
    }
    scores.iter().sum::<f64>() / scores.len().max(1) as f64
}

fn gaps(r: &Reference) -> Vec<Vec<f64>> {
    r.eic
        .iter()
        .zip(&r.baseline)
        .map(|(e, b)| e.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect()
}

fn main() {
    println!("acceptance suite");
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };
    tally(report("1", "gradient correctness", gradient_checks));
    tally(report("2", "metric oracles", metric_oracles));
    tally(report("3", "oracle cycle closure", oracle_cycle_closure));

    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let load = |name: &str| {
        materialise(
            &read_json(name),
            &dir.path().join(name.trim_end_matches(".json")),
        )
    };
    let (train, val, test) = (
        load("data_train.json"),
        load("data_val.json"),
        load("data_test.json"),
    );
    let setup = t0.elapsed();
    println!(
        "      reference data: {} train, {} val, {} test clips",
        train.len(),
        val.len(),
        test.len()
    );

    tally(report("4", "baseline equivalence", || {
        baseline_equivalence(&train, &val)
    }));

    let reference = catch_unwind(AssertUnwindSafe(|| {
        reference_recipe(&train, &val, &test, setup)
    }));
    match &reference {
        Ok(r) => {
            let g = gaps(r);
            let h1: Vec<f64> = g.iter().map(|x| x[0]).collect();
            let h4: Vec<f64> = g.iter().map(|x| x[3]).collect();
            let (m1, m4) = (median(&h1), median(&h4));
            let in_time = r.elapsed < Duration::from_secs(45 * 60);
            tally(report("5", "horizon-1 gain of the cycle loss", || {
                verdict(
                    m1 >= 0.2 && in_time,
                    format!(
                        "median h1 gap {m1:+.3} dB over seeds (per seed {}; need >= +0.2), {:.0} s of 2700",
                        fmt_row(&h1),
                        r.elapsed.as_secs_f64()
                    ),
                )
            }));
            tally(report(
                "6",
                "gap widens with horizon; baseline degrades",
                || {
                    let monotone = r
                        .baseline
                        .iter()
                        .all(|b| b.windows(2).all(|w| w[1] <= w[0]));
                    verdict(
                    m4 >= m1 && monotone,
                    format!(
                        "median gap h1 {m1:+.3} / h4 {m4:+.3} dB; baseline non-increasing in all seeds: {monotone}"
                    ),
                )
                },
            ));
            tally(report("7", "freeze and inference contracts", || {
                let (a, b) = r.interp_checksums;
                verdict(
                    a == b && r.eval_records > 0,
                    format!(
                        "interpolator crc {a:08x} -> {b:08x} across {} runs; checkpoint-only evaluation gave {} records",
                        SEEDS.len(),
                        r.eval_records
                    ),
                )
            }));
            println!(
                "NOTE interpolator against the oracle on held-out rigid clips: {:.2} dB (bound {INTERP_BOUND_DB} dB{})",
                r.interp_psnr,
                if r.interp_psnr >= INTERP_BOUND_DB { ", met" } else { ", not met" }
            );
        }
        Err(_) => {
            for (id, name) in [
                ("5", "horizon-1 gain"),
                ("6", "gap widening"),
                ("7", "freeze contracts"),
            ] {
                tally(report(id, name, || {
                    verdict(false, "reference recipe did not complete")
                }));
            }
        }
    }
    tally(report("8", "format round-trips", format_round_trips));
    println!("acceptance: {passed}/{total} criteria pass");
}
