//! Two-phase optimisation: interpolator pretraining, then extrapolator
//! training with the frozen interpolator in the loss.

mod checkpoint;
mod config;
mod log;
mod optim;
mod run;

pub use checkpoint::{load_extrapolator, load_interpolator, ModelKind, TrainCheckpoint};
pub use config::{Phase, TrainConfig};
pub use log::{median, EpochRecord, StepRecord, TrainLog, EPOCH_CSV_HEADER, STEP_CSV_HEADER};
pub use optim::{optimizer_step, AdamHyper, AdamState};
pub use run::{
    train_extrapolator, train_extrapolator_baseline, train_interpolator, CycleTerm, InterpCycle,
    NoCycle, TrainData, TrainOptions,
};
