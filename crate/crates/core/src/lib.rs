//! Online detection of abrupt changes in methane emission rate from
//! mobile plume-transect measurements.

pub mod bocd;
pub mod cli;
pub mod detector;
pub mod error;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod synthesis;
pub mod transport;

pub use error::{Error, Result};
