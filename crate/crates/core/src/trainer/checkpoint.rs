use std::path::Path;

use super::optim::AdamState;
use crate::error::{EicError, Result};
use crate::fsutil::write_atomic;
use crate::nets::{
    decode_entries, encode_entries, ExtrapolatorModel, InterpolatorModel, ParameterSet,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Interpolator,
    Extrapolator,
}

impl ModelKind {
    fn code(self) -> f64 {
        match self {
            ModelKind::Interpolator => 0.0,
            ModelKind::Extrapolator => 1.0,
        }
    }

    fn from_code(v: f64) -> Result<Self> {
        match v {
            0.0 => Ok(ModelKind::Interpolator),
            1.0 => Ok(ModelKind::Extrapolator),
            other => Err(EicError::format(
                0,
                format!("unknown model kind code {other}"),
            )),
        }
    }
}

/// Weights, optimizer state and position of a training run.
///
/// Entries are stored as `meta.*` scalars, `param.<name>`, and optionally
/// `adam.m.<name>` / `adam.v.<name>`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainCheckpoint {
    pub kind: ModelKind,
    pub k: usize,
    pub channels: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub lambda: f64,
    pub params: ParameterSet,
    pub optimizer: Option<AdamState>,
}

const META: [&str; 6] = [
    "meta.kind",
    "meta.k",
    "meta.channels",
    "meta.epoch",
    "meta.step",
    "meta.lambda",
];

impl TrainCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta_vals = [
            self.kind.code(),
            self.k as f64,
            self.channels as f64,
            self.epoch as f64,
            self.step as f64,
            self.lambda,
        ];
        let meta: Vec<(String, Tensor)> = META
            .iter()
            .zip(meta_vals)
            .map(|(n, v)| (n.to_string(), Tensor::scalar(v)))
            .collect();
        let mut owned = meta;
        owned.extend(
            self.params
                .iter()
                .map(|(n, t)| (format!("param.{n}"), t.clone())),
        );
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("adam.m", &opt.m), ("adam.v", &opt.v)] {
                owned.extend(
                    self.params
                        .names()
                        .zip(moments)
                        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone())),
                );
            }
            owned.push(("meta.adam_step".into(), Tensor::scalar(opt.step as f64)));
        }
        encode_entries(owned.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = decode_entries(bytes)?;
        let scalar = |name: &str| -> Result<f64> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| EicError::format(0, format!("missing entry {name}")))?
                .1
                .item()
        };
        let kind = ModelKind::from_code(scalar("meta.kind")?)?;
        let mut params = ParameterSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in &entries {
            if let Some(n) = name.strip_prefix("param.") {
                params.push(n, t.clone())?;
            } else if name.starts_with("adam.m.") {
                m.push(t.clone());
            } else if name.starts_with("adam.v.") {
                v.push(t.clone());
            }
        }
        let optimizer = if m.is_empty() {
            None
        } else {
            if m.len() != params.len() || v.len() != params.len() {
                return Err(EicError::format(
                    0,
                    "optimizer moments do not cover every parameter",
                ));
            }
            Some(AdamState {
                step: scalar("meta.adam_step")? as u64,
                m,
                v,
            })
        };
        Ok(TrainCheckpoint {
            kind,
            k: scalar("meta.k")? as usize,
            channels: scalar("meta.channels")? as usize,
            epoch: scalar("meta.epoch")? as usize,
            step: scalar("meta.step")? as u64,
            lambda: scalar("meta.lambda")?,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EicError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// The interpolator, already frozen.
    pub fn interpolator(&self) -> Result<InterpolatorModel> {
        if self.kind != ModelKind::Interpolator {
            return Err(EicError::Config(
                "checkpoint holds an extrapolator, not an interpolator".into(),
            ));
        }
        let mut m = InterpolatorModel::from_parameters(self.channels, self.params.clone())?;
        m.freeze();
        Ok(m)
    }

    pub fn extrapolator(&self) -> Result<ExtrapolatorModel> {
        if self.kind != ModelKind::Extrapolator {
            return Err(EicError::Config(
                "checkpoint holds an interpolator, not an extrapolator".into(),
            ));
        }
        ExtrapolatorModel::from_parameters(self.k, self.channels, self.params.clone())
    }
}

/// Loads a frozen interpolator from an `.eick` file.
pub fn load_interpolator(path: &Path) -> Result<InterpolatorModel> {
    TrainCheckpoint::load(path)?.interpolator()
}

pub fn load_extrapolator(path: &Path) -> Result<ExtrapolatorModel> {
    TrainCheckpoint::load(path)?.extrapolator()
}
