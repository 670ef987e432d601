//! Image IO, weight files, evaluation and the command line around
//! [`bsra_core`].

pub mod cli;
pub mod eval;
pub mod imageio;
pub mod imaging;
pub mod pipeline;
pub mod stats;
pub mod weights;
