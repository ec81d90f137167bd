pub mod cli;
pub mod crowd;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod net;
pub mod pose;
pub mod service;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
