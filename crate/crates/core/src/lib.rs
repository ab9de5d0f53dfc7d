//! Data-driven intrinsic modeling of time series.
//!
//! The pipeline embeds a measured time series with diffusion maps built on a
//! local-covariance (modified Mahalanobis) kernel, reads linear latent
//! dynamics off the kernel spectrum, fits a linear lift back to the
//! measurements and runs a contracting observer on new frames.
//!
//! ```text
//! datagen → features → kernel → spectral → lift → observer
//!                                                   ↘ harness
//! ```

pub mod datagen;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod lift;
pub mod linalg;
pub mod observer;
pub mod pipeline;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
