use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{EicError, Result};
use crate::losses::LossBreakdown;

pub const STEP_CSV_HEADER: &str = "step,l_error,l_reg,l_eic,l_total,wall_ms";
pub const EPOCH_CSV_HEADER: &str = "epoch,val_psnr";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub breakdown: LossBreakdown,
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{:.3}",
            self.step, b.error_term, b.regularization_term, b.eic_term, b.total, self.wall_ms
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_psnr: Option<f64>,
}

/// Per-step losses and per-epoch validation scores of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn totals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.breakdown.total).collect()
    }

    /// Step CSV without the wall-clock column, for run comparisons.
    pub fn deterministic_csv(&self) -> String {
        let mut out = String::from("step,l_error,l_reg,l_eic,l_total\n");
        for s in &self.steps {
            let b = &s.breakdown;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.step, b.error_term, b.regularization_term, b.eic_term, b.total
            );
        }
        out
    }

    /// Median of the first and last 10% of step totals.
    pub fn head_tail_medians(&self) -> Option<(f64, f64)> {
        let t = self.totals();
        let n = (t.len() / 10).max(1);
        if t.len() < 2 {
            return None;
        }
        Some((median(&t[..n]), median(&t[t.len() - n..])))
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Appends lines to a CSV, writing `header` first when the file is new.
pub(crate) fn append_csv(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| EicError::io(path, e))?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(header);
        buf.push('\n');
    }
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| EicError::io(path, e))
}
