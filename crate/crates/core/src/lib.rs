pub mod analysis;
pub mod autodiff;
pub mod batch;
pub mod checkpoint;
pub mod dataset;
pub mod decoder;
pub mod embed_init;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod predictions;
pub mod search;
pub mod trainer;
pub mod training;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
