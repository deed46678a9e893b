//! AT-AT: an autoencoder-targeted adversarial transformer for removing EMG
//! artifacts from single-channel EEG segments.

pub mod adversarial;
pub mod autoencoder;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gate;
pub mod mask;
pub mod metrics;
mod nn;
pub mod pipeline;
pub mod seed;
pub mod signal;

pub use error::{CoreError, Result};
