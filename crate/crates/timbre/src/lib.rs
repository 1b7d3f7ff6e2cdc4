pub mod analysis;
pub mod config;
pub mod dsp;
pub mod error;
pub mod fixture;
pub mod io;
pub mod pipeline;
pub mod render;

pub use error::{Error, Result};
