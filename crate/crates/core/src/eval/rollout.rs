use crate::error::{EicError, Result};
use crate::nets::Extrapolator;
use crate::synth::{ClipWindow, Frame};

/// Autoregressive prediction of `horizon` frames. Each step drops the oldest
/// input and appends the newest prediction, so ground truth only enters
/// through the initial past frames.
pub fn rollout(
    model: &dyn Extrapolator,
    window: &ClipWindow<'_>,
    horizon: usize,
) -> Result<Vec<Frame>> {
    if horizon == 0 {
        return Err(EicError::Config(
            "rollout horizon must be at least 1".into(),
        ));
    }
    if window.targets.len() < horizon {
        return Err(EicError::Arity {
            what: "target frames",
            expected: horizon,
            got: window.targets.len(),
        });
    }
    let mut inputs: Vec<Frame> = window.past.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = model.extrapolate(&inputs)?;
        inputs.remove(0);
        inputs.push(next.clone());
        out.push(next);
    }
    Ok(out)
}
