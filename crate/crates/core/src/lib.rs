pub mod bench;
pub mod encoder;
pub mod exec;
pub mod error;
pub mod features;
pub mod harness;
pub mod index;
pub mod nn;
pub mod plan;
pub mod stats;
pub mod store;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
