pub mod analysis;
pub mod config;
pub mod corpus;
pub mod crystal;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
