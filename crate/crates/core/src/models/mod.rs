//! Parametric components shared by the three frameworks: convolutional
//! encoder and decoder, conditional prior, and latent classifiers.

mod arch;
mod checkpoint;
mod heads;
mod network;
mod params;

pub use arch::{Architecture, Framework, CHARACTERISTIC_DIMS, LATENT_DIM, MLP_WIDTH};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, CheckpointMeta};
pub use heads::{Classifier, ClassifierTrace, Prior, PROB_EPS};
pub use network::{Decoder, DecoderTrace, Encoder, EncoderTrace, STD_FLOOR};
pub use params::ModelParams;

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Diagonal Gaussian parameters for `rows` items of dimension `dim`, stored
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams<T> {
    pub dim: usize,
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> GaussianParams<T> {
    pub fn new(dim: usize, mean: Vec<T>, std: Vec<T>) -> Self {
        assert_eq!(mean.len(), std.len(), "mean/std length");
        assert_eq!(mean.len() % dim, 0, "rows");
        Self { dim, mean, std }
    }

    pub fn standard(dim: usize, rows: usize) -> Self {
        Self { dim, mean: vec![T::ZERO; dim * rows], std: vec![T::ONE; dim * rows] }
    }

    pub fn rows(&self) -> usize {
        self.mean.len() / self.dim
    }

    pub fn row(&self, i: usize) -> GaussianParams<T> {
        let r = i * self.dim..(i + 1) * self.dim;
        Self { dim: self.dim, mean: self.mean[r.clone()].to_vec(), std: self.std[r].to_vec() }
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len() && self.std.iter().all(|s| *s > T::ZERO && s.is_finite())
    }
}

/// Per-label Bernoulli probabilities, clamped to `(PROB_EPS, 1 - PROB_EPS)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelProbabilities {
    pub p: [f64; 3],
}

impl LabelProbabilities {
    pub fn from_slice<T: Real>(p: &[T]) -> Self {
        let mut out = [0.0; 3];
        for (o, v) in out.iter_mut().zip(p) {
            *o = v.to_f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
        }
        Self { p: out }
    }

    pub fn predictions(&self) -> [bool; 3] {
        self.p.map(|p| p > 0.5)
    }
}

/// `z = mean + std * noise`, row by row.
pub fn reparameterize<T: Real>(g: &GaussianParams<T>, noise: &[T]) -> Vec<T> {
    assert_eq!(noise.len(), g.mean.len(), "noise length must match the Gaussian");
    g.mean.iter().zip(&g.std).zip(noise).map(|((m, s), e)| *m + *s * *e).collect()
}
