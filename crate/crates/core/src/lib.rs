pub mod cem;
pub mod cli;
pub mod config;
pub mod error;
pub mod hyperprior;
pub mod ias;
pub mod increments;
pub mod mesh;
pub mod postproc;
pub mod sim;
pub mod sparse;

pub use error::{EitError, Result};
