//! Keyword-spotting toolkit: MFCC frontend, a small autograd engine for
//! residual convolutional networks, Speech Commands dataset handling,
//! training, evaluation, and footprint analysis.

pub mod audio;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod rng;
pub mod training;

pub use audio::{AudioBuffer, FeatureMatrix, FrontendConfig};
pub use dataset::{AugmentationConfig, LabelSpace, LabeledSample, Split};
pub use error::{Error, Result};
pub use models::{footprint, ArchName, ArchSpec, Footprint, Model};
pub use training::{
    load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, TrainOutcome, TrainState,
};
