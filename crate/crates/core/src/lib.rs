//! Spectro-temporal modulation features for audio classification.

pub mod ablation;
pub mod audio_io;
pub mod baseline_features;
pub mod cochleagram;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mlp;
pub mod modulation;
pub mod pca;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
