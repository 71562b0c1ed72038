//! File formats, synthetic data and the command-line front end around
//! [`sgfsis_core`].

mod error;
pub mod arrays;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod formats;
pub mod model;
pub mod report;
pub mod sgt;
pub mod synth;

pub use error::{Error, Result};
