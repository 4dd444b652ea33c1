//! Characteristic-capturing variational auto-encoders (CCVAEs) and two
//! baseline VAE variants over functional-connectivity matrices, with a
//! synthetic cohort generator, intervention analysis and disentanglement
//! metrics.

pub mod analysis;
pub mod error;
pub mod labels;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod real;
pub mod rng;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use labels::LabelVector;
pub use models::{Architecture, Framework, GaussianParams, LabelProbabilities, ModelParams};
