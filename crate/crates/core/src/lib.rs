pub mod cli;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fam;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
