use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim, PSNR_CAP_DB};
use super::rollout::rollout;
use crate::error::{EicError, Result};
use crate::fsutil::write_atomic;
use crate::nets::Extrapolator;
use crate::synth::{window_samples, ClipWindow, Frame, VideoClip, MIN_FRAME_SIDE};
use crate::trainer::median;

pub const REPORT_CSV_HEADER: &str = "clip_id,t_index,horizon,psnr_db,ssim";

const AGGREGATION_NOTE: &str =
    "aggregates pool per-window records; both mean and median are reported";

/// Rollout evaluation settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub horizon: usize,
    pub stride: usize,
    /// Worker threads; 0 or 1 evaluates inline. Results do not depend on it.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizon: 4,
            stride: 1,
            threads: 1,
        }
    }
}

/// One scored prediction. `t_index` is the clip index of the first target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub clip_id: String,
    pub t_index: usize,
    pub horizon: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricRecord {
    pub fn key(&self) -> (String, usize, usize) {
        (self.clip_id.clone(), self.t_index, self.horizon)
    }

    fn key_label(&self) -> String {
        format!("{}@{}+{}", self.clip_id, self.t_index, self.horizon)
    }
}

/// Run metadata carried alongside the records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: Option<String>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
}

/// Per-horizon aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub count: usize,
    pub psnr_mean: f64,
    pub psnr_median: f64,
    pub ssim_mean: f64,
    pub ssim_median: f64,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    meta: &'a ReportMeta,
    psnr_cap_db: f64,
    aggregation: &'a str,
    horizons: Vec<HorizonSummary>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<MetricRecord>,
    pub meta: ReportMeta,
}

impl MetricsReport {
    /// Checks key uniqueness and metric ranges.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.key()) {
                return Err(EicError::Contract(format!(
                    "duplicate report key {}",
                    r.key_label()
                )));
            }
            if !(0.0..=PSNR_CAP_DB).contains(&r.psnr_db)
                || !(-1.0..=1.0).contains(&r.ssim)
                || r.horizon == 0
            {
                return Err(EicError::Contract(format!(
                    "record {} out of range: psnr {} ssim {}",
                    r.key_label(),
                    r.psnr_db,
                    r.ssim
                )));
            }
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        self.records.iter().map(|r| r.horizon).max().unwrap_or(0)
    }

    /// Aggregates in ascending horizon order.
    pub fn summary(&self) -> Vec<HorizonSummary> {
        let mut by_h: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &self.records {
            let e = by_h.entry(r.horizon).or_default();
            e.0.push(r.psnr_db);
            e.1.push(r.ssim);
        }
        by_h.into_iter()
            .map(|(horizon, (p, s))| HorizonSummary {
                horizon,
                count: p.len(),
                psnr_mean: p.iter().sum::<f64>() / p.len() as f64,
                psnr_median: median(&p),
                ssim_mean: s.iter().sum::<f64>() / s.len() as f64,
                ssim_median: median(&s),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.clip_id, r.t_index, r.horizon, r.psnr_db, r.ssim
            );
        }
        out
    }

    /// Parses the CSV written by [`MetricsReport::to_csv`]; metadata is empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == REPORT_CSV_HEADER => {}
            _ => {
                return Err(EicError::Config(format!(
                    "report csv must start with \"{REPORT_CSV_HEADER}\""
                )))
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| EicError::Config(format!("report csv line {}: {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            records.push(MetricRecord {
                clip_id: f[0].to_string(),
                t_index: f[1].parse().map_err(|_| bad("bad t_index"))?,
                horizon: f[2].parse().map_err(|_| bad("bad horizon"))?,
                psnr_db: f[3].parse().map_err(|_| bad("bad psnr_db"))?,
                ssim: f[4].parse().map_err(|_| bad("bad ssim"))?,
            });
        }
        let report = MetricsReport {
            records,
            meta: ReportMeta::default(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn summary_json(&self) -> String {
        let s = SummaryJson {
            meta: &self.meta,
            psnr_cap_db: PSNR_CAP_DB,
            aggregation: AGGREGATION_NOTE,
            horizons: self.summary(),
        };
        serde_json::to_string_pretty(&s).expect("summary serialises")
    }

    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| EicError::io(dir, e))?;
        write_atomic(&dir.join("metrics.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("summary.json"), self.summary_json().as_bytes())
    }

    /// Reads a report CSV, or `metrics.csv` when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join("metrics.csv")
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| EicError::io(&file, e))?;
        Self::from_csv(&text)
    }
}

fn check_compatible(model: &dyn Extrapolator, clips: &[VideoClip]) -> Result<()> {
    for clip in clips {
        let Some((h, w, c)) = clip.dims() else {
            continue;
        };
        if let Some(mc) = model.channels() {
            if mc != c {
                return Err(EicError::dim(
                    "C",
                    format!(
                        "model expects {mc} channels, clip {} has shape {h}x{w}x{c}",
                        clip.id
                    ),
                ));
            }
            if h % MIN_FRAME_SIDE != 0 || w % MIN_FRAME_SIDE != 0 {
                return Err(EicError::dim(
                    "H/W",
                    format!("model needs sides divisible by {MIN_FRAME_SIDE}, clip {} has shape {h}x{w}x{c}", clip.id),
                ));
            }
        }
    }
    Ok(())
}

fn score_window(
    model: &dyn Extrapolator,
    w: &ClipWindow<'_>,
    horizon: usize,
    keep_frames: bool,
) -> Result<(Vec<MetricRecord>, Vec<Frame>)> {
    let preds = rollout(model, w, horizon)?;
    let mut records = Vec::with_capacity(horizon);
    for (j, (p, gt)) in preds.iter().zip(w.targets).enumerate() {
        records.push(MetricRecord {
            clip_id: w.clip_id.to_string(),
            t_index: w.t_index,
            horizon: j + 1,
            psnr_db: psnr(p, gt, 1.0)?,
            ssim: ssim(p, gt)?,
        });
    }
    Ok((records, if keep_frames { preds } else { Vec::new() }))
}

/// Rolls the model out on every window of every clip and scores each
/// horizon. Needs only the extrapolator.
pub fn evaluate_run(
    model: &dyn Extrapolator,
    clips: &[VideoClip],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    evaluate_run_with(model, clips, cfg, None)
}

/// Per-prediction callback: `(window, horizon, prediction, ground truth)`.
pub type FrameSink<'s> = &'s mut dyn FnMut(&ClipWindow<'_>, usize, &Frame, &Frame) -> Result<()>;

/// [`evaluate_run`] that also hands every prediction to `sink` in record
/// order (used for error maps).
pub fn evaluate_run_with(
    model: &dyn Extrapolator,
    clips: &[VideoClip],
    cfg: &EvalConfig,
    mut sink: Option<FrameSink<'_>>,
) -> Result<MetricsReport> {
    if cfg.horizon == 0 || cfg.stride == 0 {
        return Err(EicError::Config(
            "horizon and stride must be at least 1".into(),
        ));
    }
    check_compatible(model, clips)?;
    let mut windows = Vec::new();
    for clip in clips {
        let ws = window_samples(clip, model.k(), cfg.horizon, cfg.stride)?;
        if let Some(warning) = ws.warning {
            log::warn!("{warning}");
        }
        windows.extend(ws.windows);
    }
    if windows.is_empty() {
        return Err(EicError::Config(format!(
            "no clip has the {} frames needed for k = {} and horizon {}",
            model.k() + cfg.horizon,
            model.k(),
            cfg.horizon
        )));
    }
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| EicError::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let keep = sink.is_some();
    let mut records = Vec::with_capacity(windows.len() * cfg.horizon);
    // chunks bound the number of predictions held for the sink
    for chunk in windows.chunks(64) {
        let scored: Vec<Result<(Vec<MetricRecord>, Vec<Frame>)>> = match &pool {
            Some(pool) => pool.install(|| {
                chunk
                    .par_iter()
                    .map(|w| score_window(model, w, cfg.horizon, keep))
                    .collect()
            }),
            None => chunk
                .iter()
                .map(|w| score_window(model, w, cfg.horizon, keep))
                .collect(),
        };
        for (w, r) in chunk.iter().zip(scored) {
            let (recs, preds) = r?;
            if let Some(sink) = sink.as_mut() {
                for (j, (p, gt)) in preds.iter().zip(w.targets).enumerate() {
                    sink(w, j + 1, p, gt)?;
                }
            }
            records.extend(recs);
        }
    }
    let report = MetricsReport {
        records,
        meta: ReportMeta::default(),
    };
    report.validate()?;
    Ok(report)
}

/// Per-horizon means of two reports and their differences `b − a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub horizon: usize,
    pub psnr_a: f64,
    pub psnr_b: f64,
    pub psnr_gap: f64,
    pub ssim_a: f64,
    pub ssim_b: f64,
    pub ssim_gap: f64,
}

/// Compares two reports over identical keys; any key present in only one
/// report is listed in the error.
pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<Vec<GapRow>> {
    let ka: BTreeSet<_> = a.records.iter().map(MetricRecord::key).collect();
    let kb: BTreeSet<_> = b.records.iter().map(MetricRecord::key).collect();
    if ka != kb {
        let label = |k: &(String, usize, usize)| format!("{}@{}+{}", k.0, k.1, k.2);
        let mut missing: Vec<String> = ka
            .difference(&kb)
            .map(|k| format!("{} (only in A)", label(k)))
            .collect();
        missing.extend(
            kb.difference(&ka)
                .map(|k| format!("{} (only in B)", label(k))),
        );
        return Err(EicError::KeyMismatch { missing });
    }
    Ok(a.summary()
        .into_iter()
        .zip(b.summary())
        .map(|(sa, sb)| GapRow {
            horizon: sa.horizon,
            psnr_a: sa.psnr_mean,
            psnr_b: sb.psnr_mean,
            psnr_gap: sb.psnr_mean - sa.psnr_mean,
            ssim_a: sa.ssim_mean,
            ssim_b: sb.ssim_mean,
            ssim_gap: sb.ssim_mean - sa.ssim_mean,
        })
        .collect())
}

pub const GAP_CSV_HEADER: &str = "horizon,psnr_a,psnr_b,psnr_gap,ssim_a,ssim_b,ssim_gap";

pub fn gap_table_csv(rows: &[GapRow]) -> String {
    let mut out = String::from(GAP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.horizon, r.psnr_a, r.psnr_b, r.psnr_gap, r.ssim_a, r.ssim_b, r.ssim_gap
        );
    }
    out
}

/// Human-readable table: A's values, then B's values with `(b − a)`.
pub fn gap_table_text(rows: &[GapRow]) -> String {
    let mut out = format!(
        "{:<8} {:>18} {:>26}\n",
        "horizon", "A psnr / ssim", "B psnr / ssim (gap)"
    );
    for r in rows {
        let b = format!(
            "{:.2} ({:+.2}) / {:.3} ({:+.3})",
            r.psnr_b, r.psnr_gap, r.ssim_b, r.ssim_gap
        );
        let _ = writeln!(
            out,
            "{:<8} {:>18} {:>26}",
            r.horizon,
            format!("{:.2} / {:.3}", r.psnr_a, r.ssim_a),
            b
        );
    }
    out
}
