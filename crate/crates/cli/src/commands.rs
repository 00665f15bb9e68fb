use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use eic_core::error::EicError;
use eic_core::eval::{
    compare_reports, error_map, evaluate_run_with, gap_table_csv, gap_table_text, EvalConfig,
    MetricsReport, ReportMeta,
};
use eic_core::fsutil::write_atomic;
use eic_core::synth::{
    generate_dataset, load_dataset, save_dataset, ClipWindow, DataConfig, Frame,
};
use eic_core::trainer::{
    load_interpolator, train_extrapolator, train_interpolator, ModelKind, Phase, TrainCheckpoint,
    TrainConfig, TrainData, TrainOptions,
};

use crate::manifest::{sha256_hex, RunManifest, CONFIG_FILE};
use crate::staging::Staging;
use crate::{Command, PhaseArg, UsageError};

const THREADS_VAR: &str = "EIC_THREADS";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(usage(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn manifest(
    command: &str,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    started: Instant,
) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_hash: None,
        seed,
        inputs,
        outputs: Vec::new(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Publishes a diverged run so that its `last_good.eick` survives; the
/// missing `final.eick` marks it as incomplete. Other failures discard it.
fn keep_if_diverged(stage: Staging, err: anyhow::Error) -> anyhow::Error {
    let diverged = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<EicError>(),
            Some(EicError::Numerical { .. })
        )
    });
    if diverged {
        if let Err(e) = stage.commit() {
            log::warn!("could not keep the diverged run: {e:#}");
        }
    }
    err
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| EicError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // serde_json errors carry line, column and the offending field
    let cfg = serde_json::from_str(&text)
        .map_err(EicError::from)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

/// Relative paths in a config are relative to the config file.
fn resolve(base: &Path, p: &Path) -> Result<PathBuf> {
    let joined = if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    };
    Ok(std::path::absolute(&joined)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed } => gen_data(&config, &out, seed),
        Command::Train {
            phase,
            config,
            out,
            seed,
            interp_checkpoint,
            resume,
        } => train(phase, &config, &out, seed, interp_checkpoint, resume),
        Command::Eval {
            checkpoint,
            data,
            horizon,
            stride,
            out,
        } => eval(&checkpoint, &data, horizon, stride, &out),
        Command::Compare { reports, out } => match reports.as_slice() {
            [a, b] => compare(a, b, &out),
            _ => Err(usage(format!(
                "compare needs exactly two --report flags, got {}",
                reports.len()
            ))),
        },
        Command::Sweep {
            config,
            out,
            seed,
            interp_checkpoint,
            lambdas,
            eval_data,
            horizon,
        } => sweep(
            &config,
            &out,
            seed,
            &interp_checkpoint,
            &lambdas,
            eval_data.as_deref(),
            horizon,
        ),
    }
}

fn gen_data(config: &Path, out: &Path, seed: u64) -> Result<()> {
    let started = Instant::now();
    let mut cfg: DataConfig = read_config(config)?;
    cfg.seed = seed;
    cfg.validate()
        .with_context(|| format!("validating {}", config.display()))?;
    let clips = generate_dataset(&cfg)?;
    let stage = Staging::new(out)?;
    save_dataset(&clips, stage.path())?;
    write_json(&stage.path().join(CONFIG_FILE), &cfg)?;
    manifest("gen-data", Some(seed), vec![config.to_path_buf()], started).finish(stage.path())?;
    stage.commit()?;
    log::info!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

/// Loads and normalises a training config: effective seed, phase check and
/// absolute data paths.
fn load_train_config(
    path: &Path,
    phase: PhaseArg,
    seed: u64,
    interp_checkpoint: Option<PathBuf>,
) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_config(path)?;
    let want = match phase {
        PhaseArg::Interp => Phase::Interp,
        PhaseArg::Extrap => Phase::Extrap,
    };
    if cfg.phase != want {
        return Err(usage(format!(
            "--phase {:?} does not match the config's phase {:?}",
            want, cfg.phase
        )));
    }
    cfg.seed = seed;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.train_data = resolve(base, &cfg.train_data)?;
    cfg.val_data = cfg
        .val_data
        .as_deref()
        .map(|p| resolve(base, p))
        .transpose()?;
    cfg.interp_checkpoint = match interp_checkpoint {
        Some(p) => Some(std::path::absolute(p)?),
        None => cfg
            .interp_checkpoint
            .as_deref()
            .map(|p| resolve(base, p))
            .transpose()?,
    };
    cfg.validate()
        .with_context(|| format!("validating {}", path.display()))?;
    if cfg.needs_interpolator() && cfg.interp_checkpoint.is_none() {
        return Err(usage(format!(
            "lambda = {} needs a pretrained interpolator: pass --interp-checkpoint",
            cfg.lambda
        )));
    }
    Ok(cfg)
}

/// Copies the log rows a resumed run would have written before `ck`.
fn seed_logs(resume: &Path, ck: &TrainCheckpoint, dir: &Path) -> Result<()> {
    let Some(src) = resume.parent() else {
        return Ok(());
    };
    for (file, limit) in [("train_log.csv", ck.step), ("val_log.csv", ck.epoch as u64)] {
        let Ok(text) = std::fs::read_to_string(src.join(file)) else {
            continue;
        };
        let mut kept = String::new();
        for (i, line) in text.lines().enumerate() {
            let key = line.split(',').next().and_then(|k| k.parse::<u64>().ok());
            if i == 0 || key.is_some_and(|k| k <= limit) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        std::fs::write(dir.join(file), kept)?;
    }
    Ok(())
}

/// Runs one training job into `dir` and writes its stored config.
fn train_into(cfg: &TrainConfig, dir: &Path, resume: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut inputs = vec![cfg.train_data.clone()];
    let train = load_dataset(&cfg.train_data)?;
    let val = match &cfg.val_data {
        Some(p) => {
            inputs.push(p.clone());
            load_dataset(p)?
        }
        None => Vec::new(),
    };
    let resume_ck = match resume {
        Some(p) => {
            inputs.push(p.to_path_buf());
            let ck = TrainCheckpoint::load(p)?;
            seed_logs(p, &ck, dir)?;
            Some(ck)
        }
        None => None,
    };
    let opts = TrainOptions {
        out_dir: Some(dir.to_path_buf()),
        threads: threads()?,
        resume: resume_ck,
    };
    let data = TrainData {
        train: &train,
        val: &val,
    };
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    match cfg.phase {
        Phase::Interp => {
            train_interpolator(cfg, data, &opts)?;
        }
        Phase::Extrap => {
            let interp = match (&cfg.interp_checkpoint, cfg.needs_interpolator()) {
                (Some(p), true) => {
                    inputs.push(p.clone());
                    Some(load_interpolator(p)?)
                }
                _ => None,
            };
            train_extrapolator(cfg, data, interp.as_ref(), &opts)?;
        }
    }
    Ok(inputs)
}

fn train(
    phase: PhaseArg,
    config: &Path,
    out: &Path,
    seed: u64,
    interp_checkpoint: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = load_train_config(config, phase, seed, interp_checkpoint)?;
    let stage = Staging::new(out)?;
    let inputs = match train_into(&cfg, stage.path(), resume.as_deref()) {
        Ok(v) => v,
        Err(e) => return Err(keep_if_diverged(stage, e)),
    };
    let mut all_inputs = vec![config.to_path_buf()];
    all_inputs.extend(inputs);
    manifest("train", Some(seed), all_inputs, started).finish(stage.path())?;
    stage.commit()?;
    log::info!("training finished: {}", out.join("final.eick").display());
    Ok(())
}

/// Seed recorded in the `config.json` next to a checkpoint, if any.
fn sibling_seed(checkpoint: &Path) -> Option<u64> {
    let text = std::fs::read_to_string(checkpoint.parent()?.join(CONFIG_FILE)).ok()?;
    serde_json::from_str::<serde_json::Value>(&text)
        .ok()?
        .get("seed")?
        .as_u64()
}

fn eval_into(
    checkpoint: &Path,
    data: &Path,
    horizon: usize,
    stride: usize,
    dir: &Path,
) -> Result<()> {
    let bytes =
        std::fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let ck = TrainCheckpoint::from_bytes(&bytes)?;
    if ck.kind != ModelKind::Extrapolator {
        return Err(usage(format!(
            "{} is not an extrapolator checkpoint",
            checkpoint.display()
        )));
    }
    let model = ck.extrapolator()?;
    let clips = load_dataset(data)?;
    let cfg = EvalConfig {
        horizon,
        stride,
        threads: threads()?,
    };
    let maps = dir.join("error_maps");
    std::fs::create_dir_all(&maps)?;
    let mut sink = |w: &ClipWindow<'_>, j: usize, pred: &Frame, gt: &Frame| {
        error_map(pred, gt)?
            .export_png(&maps.join(format!("{}_{}_{}.png", w.clip_id, w.t_index, j)))
    };
    let mut report: MetricsReport = evaluate_run_with(&model, &clips, &cfg, Some(&mut sink))?;
    report.meta = ReportMeta {
        checkpoint: Some(format!(
            "{}#{}",
            checkpoint.display(),
            &sha256_hex(&bytes)[..16]
        )),
        lambda: Some(ck.lambda),
        seed: sibling_seed(checkpoint),
    };
    report.save(dir)?;
    for s in report.summary() {
        println!(
            "horizon {}: psnr mean {:.3} median {:.3} | ssim mean {:.4} median {:.4} ({} windows)",
            s.horizon, s.psnr_mean, s.psnr_median, s.ssim_mean, s.ssim_median, s.count
        );
    }
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, horizon: usize, stride: usize, out: &Path) -> Result<()> {
    let started = Instant::now();
    if horizon == 0 || stride == 0 {
        return Err(usage("--horizon and --stride must be at least 1"));
    }
    let stage = Staging::new(out)?;
    eval_into(checkpoint, data, horizon, stride, stage.path())?;
    let seed = sibling_seed(checkpoint);
    manifest(
        "eval",
        seed,
        vec![checkpoint.to_path_buf(), data.to_path_buf()],
        started,
    )
    .finish(stage.path())?;
    stage.commit()
}

fn compare(a: &Path, b: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let ra = MetricsReport::load(a)?;
    let rb = MetricsReport::load(b)?;
    let rows = compare_reports(&ra, &rb)?;
    let stage = Staging::new(out)?;
    write_atomic(
        &stage.path().join("compare.csv"),
        gap_table_csv(&rows).as_bytes(),
    )?;
    let text = gap_table_text(&rows);
    write_atomic(&stage.path().join("compare.txt"), text.as_bytes())?;
    print!("{text}");
    manifest(
        "compare",
        None,
        vec![a.to_path_buf(), b.to_path_buf()],
        started,
    )
    .finish(stage.path())?;
    stage.commit()
}

fn sweep(
    config: &Path,
    out: &Path,
    seed: u64,
    interp_checkpoint: &Path,
    lambdas: &[f64],
    eval_data: Option<&Path>,
    horizon: usize,
) -> Result<()> {
    let started = Instant::now();
    if lambdas.is_empty() {
        return Err(usage("--lambdas needs at least one value"));
    }
    let base = load_train_config(
        config,
        PhaseArg::Extrap,
        seed,
        Some(interp_checkpoint.to_path_buf()),
    )?;
    let mut configs = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut cfg = base.clone();
        cfg.lambda = lambda;
        cfg.validate().with_context(|| format!("lambda {lambda}"))?;
        configs.push(cfg);
    }
    let stage = Staging::new(out)?;
    write_json(&stage.path().join(CONFIG_FILE), &base)?;
    let mut inputs = vec![config.to_path_buf()];
    for cfg in &configs {
        let dir = stage.path().join(format!("lambda_{}", cfg.lambda));
        std::fs::create_dir_all(&dir)?;
        log::info!("sweep: lambda = {}", cfg.lambda);
        let trained = match train_into(cfg, &dir, None) {
            Ok(v) => v,
            Err(e) => return Err(keep_if_diverged(stage, e)),
        };
        for p in trained {
            if !inputs.contains(&p) {
                inputs.push(p);
            }
        }
        if let Some(data) = eval_data {
            eval_into(&dir.join("final.eick"), data, horizon, 1, &dir.join("eval"))?;
        }
    }
    if let Some(data) = eval_data {
        inputs.push(data.to_path_buf());
    }
    manifest("sweep", Some(seed), inputs, started).finish(stage.path())?;
    stage.commit()
}
