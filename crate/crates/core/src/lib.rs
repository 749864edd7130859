pub mod analysis;
pub mod calib;
pub mod container;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod gbt;
pub mod intexec;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod tensor;
pub mod tuner;

pub use error::{Error, Result};
