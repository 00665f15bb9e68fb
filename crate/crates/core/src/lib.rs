pub mod error;
pub mod eval;
pub mod fsutil;
pub mod losses;
pub mod nets;
pub mod synth;
pub mod tensor;
pub mod trainer;
