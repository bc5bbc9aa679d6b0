pub mod cli;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod poseio;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
