use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{ModelKind, TrainCheckpoint};
use super::config::{Phase, TrainConfig};
use super::log::{
    append_csv, EpochRecord, StepRecord, TrainLog, EPOCH_CSV_HEADER, STEP_CSV_HEADER,
};
use super::optim::{optimizer_step, AdamState};
use crate::error::{EicError, Result};
use crate::eval::psnr;
use crate::losses::{
    breakdown, eic_loss, extrapolation_loss, total_loss, LossBreakdown, LossConfig,
};
use crate::nets::{Extrapolator, ExtrapolatorModel, InterpolatorModel, ParameterSet};
use crate::synth::{window_all, ClipWindow, VideoClip};
use crate::tensor::{Graph, Tensor, Var};

/// Training and validation clips.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [VideoClip],
    pub val: &'a [VideoClip],
}

/// Run-level options that are not part of the configuration file.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where checkpoints and CSV logs go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for per-sample gradients; 0 or 1 runs inline.
    pub threads: usize,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<TrainCheckpoint>,
}

/// Produces one sample's loss breakdown and parameter gradients.
trait Objective: Sync {
    fn sample(&self, params: &ParameterSet, index: usize) -> Result<(Vec<Tensor>, LossBreakdown)>;
}

fn collect_grads(g: &Graph, loss: Var, params: &[Var]) -> Result<Vec<Tensor>> {
    let grads = g.backward(loss)?;
    Ok(params
        .iter()
        .map(|&p| {
            grads
                .get(p)
                .cloned()
                .expect("bound parameters are trainable leaves")
        })
        .collect())
}

struct InterpObjective<'a> {
    model: &'a InterpolatorModel,
    triplets: Vec<ClipWindow<'a>>,
}

impl Objective for InterpObjective<'_> {
    fn sample(&self, params: &ParameterSet, index: usize) -> Result<(Vec<Tensor>, LossBreakdown)> {
        let w = &self.triplets[index];
        let mut g = Graph::new();
        let pv = params.bind(&mut g, true);
        let early = g.constant(w.past[0].to_tensor());
        let late = g.constant(w.targets[0].to_tensor());
        let mid = g.constant(w.past[1].to_tensor());
        let out = self.model.forward(&mut g, &pv, early, late)?;
        let loss = g.l1_mean(out.frame, mid)?;
        let l = g.value(loss).item()?;
        let grads = collect_grads(&g, loss, &pv)?;
        Ok((
            grads,
            LossBreakdown {
                error_term: l,
                total: l,
                ..Default::default()
            },
        ))
    }
}

/// Optional cycle term added to the extrapolation objective.
pub trait CycleTerm: Sync {
    fn term(&self, g: &mut Graph, pred: Var, frame_tm2: Var, frame_tm1: Var)
        -> Result<Option<Var>>;
}

/// No cycle term: the plain extrapolation objective. Instantiating the
/// training loop with this type leaves the cycle code path out entirely.
pub struct NoCycle;

impl CycleTerm for NoCycle {
    fn term(&self, _: &mut Graph, _: Var, _: Var, _: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Cycle loss through a frozen interpolator.
pub struct InterpCycle<'a> {
    pub interp: &'a InterpolatorModel,
    pub stop_gradient: bool,
}

impl CycleTerm for InterpCycle<'_> {
    fn term(
        &self,
        g: &mut Graph,
        pred: Var,
        frame_tm2: Var,
        frame_tm1: Var,
    ) -> Result<Option<Var>> {
        eic_loss(
            g,
            self.interp,
            pred,
            frame_tm2,
            frame_tm1,
            self.stop_gradient,
        )
        .map(Some)
    }
}

struct ExtrapObjective<'a, C> {
    model: &'a ExtrapolatorModel,
    windows: Vec<ClipWindow<'a>>,
    loss: LossConfig,
    cycle: C,
}

impl<C: CycleTerm> Objective for ExtrapObjective<'_, C> {
    fn sample(&self, params: &ParameterSet, index: usize) -> Result<(Vec<Tensor>, LossBreakdown)> {
        let w = &self.windows[index];
        let mut g = Graph::new();
        let pv = params.bind(&mut g, true);
        let past: Vec<Var> = w.past.iter().map(|f| g.constant(f.to_tensor())).collect();
        let out = self.model.forward(&mut g, &pv, &past)?;
        let target = g.constant(w.targets[0].to_tensor());
        let parts = extrapolation_loss(&mut g, out.frame, target, out.flow, &self.loss)?;
        let k = past.len();
        let eic = self
            .cycle
            .term(&mut g, out.frame, past[k - 2], past[k - 1])?;
        let total = total_loss(&mut g, parts.loss, eic, &self.loss)?;
        let b = breakdown(&g, &parts, eic, total)?;
        Ok((collect_grads(&g, total, &pv)?, b))
    }
}

struct LoopSetup<'a> {
    cfg: &'a TrainConfig,
    opts: &'a TrainOptions,
    kind: ModelKind,
    k: usize,
    channels: usize,
}

fn batch_gradient<O: Objective>(
    obj: &O,
    params: &ParameterSet,
    batch: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Vec<Tensor>, LossBreakdown)> {
    let results: Vec<Result<(Vec<Tensor>, LossBreakdown)>> = match pool {
        Some(pool) => pool.install(|| batch.par_iter().map(|&i| obj.sample(params, i)).collect()),
        None => batch.iter().map(|&i| obj.sample(params, i)).collect(),
    };
    // reduce in batch order so the result does not depend on thread count
    let mut sum: Option<Vec<Tensor>> = None;
    let mut parts = Vec::with_capacity(batch.len());
    for r in results {
        let (grads, b) = r?;
        parts.push(b);
        match sum.as_mut() {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let mut grads = sum.expect("batches are non-empty");
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((grads, LossBreakdown::mean(&parts)))
}

fn run_loop<O: Objective>(
    setup: &LoopSetup<'_>,
    obj: &O,
    n_samples: usize,
    params: &mut ParameterSet,
    validate: impl Fn(&ParameterSet) -> Result<Option<f64>>,
) -> Result<TrainLog> {
    let cfg = setup.cfg;
    if n_samples == 0 {
        return Err(EicError::Config(
            "no training windows: clips too short for k".into(),
        ));
    }
    let hyper = cfg.adam();
    let (mut state, start_epoch, mut step) = match &setup.opts.resume {
        Some(ck) => {
            if ck.kind != setup.kind || ck.k != setup.k || ck.channels != setup.channels {
                return Err(EicError::Config(
                    "resume checkpoint does not match this run".into(),
                ));
            }
            *params = ck.params.clone();
            let st = ck.optimizer.clone().ok_or_else(|| {
                EicError::Config("resume checkpoint has no optimizer state".into())
            })?;
            (st, ck.epoch, ck.step)
        }
        None => (AdamState::new(params), 0, 0),
    };
    let pool = if setup.opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(setup.opts.threads)
                .build()
                .map_err(|e| EicError::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    if let Some(dir) = &setup.opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| EicError::io(dir, e))?;
    }
    let checkpoint =
        |params: &ParameterSet, state: &AdamState, epoch: usize, step: u64| TrainCheckpoint {
            kind: setup.kind,
            k: setup.k,
            channels: setup.channels,
            epoch,
            step,
            lambda: cfg.lambda,
            params: params.clone(),
            optimizer: Some(state.clone()),
        };

    let mut log = TrainLog::default();
    for epoch in start_epoch..cfg.epochs {
        // the state at an epoch boundary is f32-exact and a valid resume
        // point; it becomes `last_good.eick` if this epoch diverges
        let last_good = setup
            .opts
            .out_dir
            .as_ref()
            .map(|_| checkpoint(params, &state, epoch, step));
        let mut order: Vec<usize> = (0..n_samples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let first_new = log.steps.len();
        for batch in order.chunks(cfg.batch_size) {
            let t0 = Instant::now();
            let outcome = match batch_gradient(obj, params, batch, pool.as_ref()) {
                Ok((grads, b)) if b.total.is_finite() && grads.iter().all(Tensor::all_finite) => {
                    Ok((grads, b))
                }
                Ok((_, b)) => Err(format!("non-finite loss or gradient (total = {})", b.total)),
                Err(EicError::Numerical { detail, .. }) => Err(detail),
                Err(e) => return Err(e),
            };
            let (grads, b) = match outcome {
                Ok(v) => v,
                Err(detail) => {
                    if let (Some(dir), Some(ck)) = (&setup.opts.out_dir, &last_good) {
                        ck.save(&dir.join("last_good.eick"))?;
                    }
                    return Err(EicError::Numerical {
                        step: step + 1,
                        detail,
                    });
                }
            };
            optimizer_step(params, &grads, &mut state, &hyper)?;
            step += 1;
            log.steps.push(StepRecord {
                step,
                breakdown: b,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        // checkpoints hold f32; rounding here makes resumed runs identical
        // to uninterrupted ones
        round_to_f32(
            params
                .tensors_mut()
                .chain(state.m.iter_mut())
                .chain(state.v.iter_mut()),
        );
        let val_psnr = validate(params)?;
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            val_psnr,
        });
        let recent = &log.steps[first_new..];
        let mean_total =
            recent.iter().map(|s| s.breakdown.total).sum::<f64>() / recent.len() as f64;
        let mean_ms = recent.iter().map(|s| s.wall_ms).sum::<f64>() / recent.len() as f64;
        log::info!(
            "epoch {}/{}: mean loss {mean_total:.6}, {mean_ms:.1} ms/step, val psnr {:?}",
            epoch + 1,
            cfg.epochs,
            val_psnr
        );
        if let Some(dir) = &setup.opts.out_dir {
            let lines: Vec<String> = recent.iter().map(StepRecord::csv_line).collect();
            append_csv(&dir.join("train_log.csv"), STEP_CSV_HEADER, &lines)?;
            let vline = format!(
                "{},{}",
                epoch + 1,
                val_psnr.map_or(String::new(), |v| v.to_string())
            );
            append_csv(&dir.join("val_log.csv"), EPOCH_CSV_HEADER, &[vline])?;
            let done = epoch + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                checkpoint(params, &state, done, step)
                    .save(&dir.join(format!("epoch_{done:04}.eick")))?;
            }
        }
    }
    if let Some(dir) = &setup.opts.out_dir {
        checkpoint(params, &state, cfg.epochs, step).save(&dir.join("final.eick"))?;
    }
    Ok(log)
}

fn round_to_f32<'t>(tensors: impl Iterator<Item = &'t mut Tensor>) {
    for t in tensors {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn mean(xs: impl Iterator<Item = Result<f64>>) -> Result<Option<f64>> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x?;
        n += 1;
    }
    Ok((n > 0).then(|| s / n as f64))
}

fn data_channels(clips: &[VideoClip]) -> Result<usize> {
    let dims = clips
        .first()
        .and_then(VideoClip::dims)
        .ok_or_else(|| EicError::Config("training set is empty".into()))?;
    if let Some(c) = clips.iter().find(|c| c.dims() != Some(dims)) {
        return Err(EicError::dim(
            "clip",
            format!("{} has dims {:?}, expected {dims:?}", c.id, c.dims()),
        ));
    }
    Ok(dims.2)
}

/// Phase A: fits `f_i(I_{t-2}, I_t) ≈ I_{t-1}` on every consecutive triplet.
/// The returned model is frozen.
pub fn train_interpolator(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    opts: &TrainOptions,
) -> Result<(InterpolatorModel, TrainLog)> {
    cfg.validate()?;
    if cfg.phase != Phase::Interp {
        return Err(EicError::Config(
            "train_interpolator needs phase \"interp\"".into(),
        ));
    }
    let channels = data_channels(data.train)?;
    let mut model = InterpolatorModel::new(channels, cfg.seed);
    let triplets = window_all(data.train, 2, 1, cfg.window_stride)?;
    let n = triplets.len();
    let mut params = model.params().clone();
    let val = window_all(data.val, 2, 1, cfg.window_stride)?;
    let setup = LoopSetup {
        cfg,
        opts,
        kind: ModelKind::Interpolator,
        k: 2,
        channels,
    };
    let obj = InterpObjective {
        model: &model,
        triplets,
    };
    let log = run_loop(&setup, &obj, n, &mut params, |p| {
        let m = InterpolatorModel::from_parameters(channels, p.clone())?;
        mean(
            val.iter()
                .map(|w| psnr(&m.interpolate(&w.past[0], &w.targets[0])?, &w.past[1], 1.0)),
        )
    })?;
    *model.params_mut()? = params;
    model.freeze();
    Ok((model, log))
}

fn train_extrap_with<C: CycleTerm>(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    cycle: C,
    opts: &TrainOptions,
) -> Result<(ExtrapolatorModel, TrainLog)> {
    let channels = data_channels(data.train)?;
    let mut model = ExtrapolatorModel::new(cfg.k, channels, cfg.seed)?;
    let windows = window_all(data.train, cfg.k, 1, cfg.window_stride)?;
    let n = windows.len();
    let val = window_all(data.val, cfg.k, 1, cfg.window_stride)?;
    let mut params = model.params().clone();
    let setup = LoopSetup {
        cfg,
        opts,
        kind: ModelKind::Extrapolator,
        k: cfg.k,
        channels,
    };
    let obj = ExtrapObjective {
        model: &model,
        windows,
        loss: cfg.loss(),
        cycle,
    };
    let log = run_loop(&setup, &obj, n, &mut params, |p| {
        let m = ExtrapolatorModel::from_parameters(cfg.k, channels, p.clone())?;
        mean(
            val.iter()
                .map(|w| psnr(&m.extrapolate(w.past)?, &w.targets[0], 1.0)),
        )
    })?;
    *model.params_mut() = params;
    Ok((model, log))
}

/// Phase B: minimises `L_extra + lambda · L_EIC` with the interpolator held
/// fixed. With `lambda = 0` the cycle path is skipped and no interpolator is
/// needed.
pub fn train_extrapolator(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    interp: Option<&InterpolatorModel>,
    opts: &TrainOptions,
) -> Result<(ExtrapolatorModel, TrainLog)> {
    cfg.validate()?;
    if cfg.phase != Phase::Extrap {
        return Err(EicError::Config(
            "train_extrapolator needs phase \"extrap\"".into(),
        ));
    }
    if cfg.lambda == 0.0 {
        return train_extrap_with(cfg, data, NoCycle, opts);
    }
    let interp = interp.ok_or_else(|| {
        EicError::Config(format!(
            "lambda = {} needs a pretrained interpolator (interp_checkpoint)",
            cfg.lambda
        ))
    })?;
    if !interp.is_frozen() {
        return Err(EicError::Contract(
            "the interpolator must be frozen before extrapolator training".into(),
        ));
    }
    let channels = data_channels(data.train)?;
    if interp.channels() != channels {
        return Err(EicError::dim(
            "C",
            format!(
                "interpolator has {} channels, data has {channels}",
                interp.channels()
            ),
        ));
    }
    let cycle = InterpCycle {
        interp,
        stop_gradient: cfg.eic_stop_gradient,
    };
    train_extrap_with(cfg, data, cycle, opts)
}

/// Extrapolator training with the cycle term absent from the build of the
/// loop altogether; `lambda` is ignored.
pub fn train_extrapolator_baseline(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    opts: &TrainOptions,
) -> Result<(ExtrapolatorModel, TrainLog)> {
    cfg.validate()?;
    train_extrap_with(cfg, data, NoCycle, opts)
}
