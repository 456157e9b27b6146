//! Recovery of articulated hand motion from 2D keypoint sequences by
//! two-stage optimization over global trajectory variables and the latent
//! code of a generative motion prior.

pub mod error;
pub mod geometry;
pub mod handmodel;
pub mod ingest;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod prior;
pub mod priortrain;
pub mod synth;

pub use error::{Error, Result};
