//! Composite extrapolation loss, the cycle loss through a frozen
//! interpolator, and their weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{EicError, Result};
use crate::nets::GraphInterpolator;
use crate::tensor::{Graph, Var};

/// Pixel error measure for the error term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    #[default]
    L1,
    L2,
}

/// Default cycle-loss weight.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Default flow smoothness weight.
pub const DEFAULT_BETA: f64 = 0.01;

/// Loss weights. `alpha` weights a generative term that is not
/// implemented and must stay 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub error_kind: ErrorKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.0,
            beta: DEFAULT_BETA,
            lambda: DEFAULT_LAMBDA,
            error_kind: ErrorKind::L1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha != 0.0 {
            return Err(EicError::Config(format!(
                "alpha must be 0 (no generative term), got {}",
                self.alpha
            )));
        }
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EicError::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Scalar values of every loss term of one sample or batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub error_term: f64,
    pub regularization_term: f64,
    pub eic_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `error + beta·reg + lambda·eic`.
    pub fn reconstruct(&self, cfg: &LossConfig) -> f64 {
        self.error_term + cfg.beta * self.regularization_term + cfg.lambda * self.eic_term
    }

    /// Elementwise mean of several breakdowns, summed in order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.error_term += b.error_term;
            acc.regularization_term += b.regularization_term;
            acc.eic_term += b.eic_term;
            acc.total += b.total;
        }
        LossBreakdown {
            error_term: acc.error_term / n,
            regularization_term: acc.regularization_term / n,
            eic_term: acc.eic_term / n,
            total: acc.total / n,
        }
    }
}

/// Graph handles of the extrapolation loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ExtrapLossVars {
    pub loss: Var,
    pub error_term: Var,
    pub regularization_term: Var,
}

/// `L_E(pred, target) + beta · TV(flow)`.
pub fn extrapolation_loss(
    g: &mut Graph,
    pred: Var,
    target: Var,
    flow: Var,
    cfg: &LossConfig,
) -> Result<ExtrapLossVars> {
    cfg.validate()?;
    let error_term = match cfg.error_kind {
        ErrorKind::L1 => g.l1_mean(pred, target)?,
        ErrorKind::L2 => g.l2_mean(pred, target)?,
    };
    let regularization_term = g.total_variation(flow)?;
    let weighted = g.scale(regularization_term, cfg.beta);
    let loss = g.add(error_term, weighted)?;
    Ok(ExtrapLossVars {
        loss,
        error_term,
        regularization_term,
    })
}

/// `L1(f_i(I_{t-2}, Î_t), I_{t-1})`, differentiable with respect to `pred`.
pub fn eic_loss(
    g: &mut Graph,
    interp: &dyn GraphInterpolator,
    pred: Var,
    frame_tm2: Var,
    frame_tm1: Var,
    stop_gradient: bool,
) -> Result<Var> {
    if !interp.is_frozen() {
        return Err(EicError::Contract(
            "the cycle loss needs a frozen interpolator".into(),
        ));
    }
    let resynth = interp.interpolate_graph(g, frame_tm2, pred, stop_gradient)?;
    g.l1_mean(resynth, frame_tm1)
}

/// `extrap + lambda · eic`, or `extrap` alone when there is no cycle term.
/// A non-finite input is a [`EicError::Numerical`] error with step 0.
pub fn total_loss(g: &mut Graph, extrap: Var, eic: Option<Var>, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let check = |g: &Graph, v: Var, name: &str| -> Result<()> {
        let x = g.value(v).item()?;
        if !x.is_finite() {
            return Err(EicError::Numerical {
                step: 0,
                detail: format!("{name} is {x}"),
            });
        }
        if x < 0.0 {
            return Err(EicError::Contract(format!("{name} must be >= 0, got {x}")));
        }
        Ok(())
    };
    check(g, extrap, "extrapolation loss")?;
    let Some(eic) = eic else { return Ok(extrap) };
    check(g, eic, "cycle loss")?;
    let weighted = g.scale(eic, cfg.lambda);
    g.add(extrap, weighted)
}

/// Reads the scalar terms back out of a graph.
pub fn breakdown(
    g: &Graph,
    parts: &ExtrapLossVars,
    eic: Option<Var>,
    total: Var,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown {
        error_term: g.value(parts.error_term).item()?,
        regularization_term: g.value(parts.regularization_term).item()?,
        eic_term: eic.map(|v| g.value(v).item()).transpose()?.unwrap_or(0.0),
        total: g.value(total).item()?,
    })
}
