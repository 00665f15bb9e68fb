//! The interpolation and extrapolation networks, their oracles and the
//! weight container.

mod checkpoint;
mod models;
mod params;
mod unet;

pub use checkpoint::{decode_entries, encode_entries, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use models::{
    oracle_extrapolate, oracle_interpolate, persistence_extrapolate, ExtrapOutput, Extrapolator,
    ExtrapolatorModel, GraphInterpolator, InterpOutput, InterpolatorModel, OracleExtrapolator,
    OracleInterpolator, PersistenceExtrapolator, MAX_FLOW, RESIDUAL_SCALE,
};
pub use params::{init_parameters, LayerSpec, ParameterSet, HEAD_GAIN, KERNEL};
pub use unet::{UNetDescriptor, DOWNSAMPLE, WIDTHS};
