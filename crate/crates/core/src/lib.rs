//! Recurrent answering units: a shared-parameter answering step unrolled
//! over several reasoning steps, trained with a joint per-step loss and
//! progressive early stopping, and evaluated from the first step only.

pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod files;
pub mod gradcheck;
pub mod model;
pub mod rau;
pub mod taskgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
