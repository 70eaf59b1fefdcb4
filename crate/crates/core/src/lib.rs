//! Robust estimation of target class proportions from multiple, possibly
//! contaminated, labeled source domains under label shift.

pub mod bench;
pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod simplex;
pub mod synth;
pub mod weighting;

pub use error::{Error, ErrorKind, Result};
