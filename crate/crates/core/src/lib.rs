//! Symmetric and asymmetric cycle-consistency training for many-to-one
//! unpaired image translation, with a synthetic thigh-slice phantom,
//! a threshold-oracle evaluation pipeline and an experiment runner.

pub mod archive;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nets;
pub mod objectives;
pub mod phantom;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
