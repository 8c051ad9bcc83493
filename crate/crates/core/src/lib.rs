pub mod error;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod probe;
pub mod synth;

pub use error::{Error, Result};
