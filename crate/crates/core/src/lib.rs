pub mod distributions;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod learners;
pub mod multivariate;
pub mod rng;
pub mod stats;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use rng::{RngStream, StreamId};
