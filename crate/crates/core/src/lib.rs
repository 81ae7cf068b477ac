pub mod adjoint;
pub mod cli;
pub mod error;
pub mod fields;
pub mod forward;
pub mod geometry;
pub mod objective;
pub mod optimizer;

pub use error::{Result, WaveError};
