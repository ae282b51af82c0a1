//! File formats, Monte-Carlo runner and command-line interface on top of
//! [`msglmb_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;

pub use error::{AppError, AppResult};
