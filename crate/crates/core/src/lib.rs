pub mod basis;
pub mod cli;
pub mod covariance;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod predict;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
