//! File formats, evaluation, timing and the command line for discrete
//! factorization machines. The algorithms live in `dfm-core`.

pub mod bench;
pub mod cli;
pub mod container;
pub mod error;
pub mod grid;
pub mod libfm;

pub use error::{Error, Result};
