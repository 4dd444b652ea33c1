use crate::nn::{Mlp, MlpCache, Tensor};
use crate::real::{sigmoid, Real};
use crate::rng::Stream;

use super::arch::{Architecture, Framework, CHARACTERISTIC_DIMS};

/// Probabilities are clamped to `(PROB_EPS, 1 - PROB_EPS)` before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Mean of the prior over `z` given labels; the prior std is fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior<T> {
    /// `mean_i = weight_i * y_i + bias_i` on the characteristic dims, zero on
    /// the rest.
    Elementwise { weight: Tensor<T>, bias: Tensor<T> },
    /// `y -> MLP -> mean` over every latent dim.
    Mlp(Mlp<T>),
    /// Label-independent standard normal.
    Standard,
}

impl<T: Real> Prior<T> {
    pub fn new(framework: Framework, arch: &Architecture, rng: &mut Stream) -> Self {
        match framework {
            Framework::Ccvae => Prior::Elementwise {
                weight: Tensor::filled(&[CHARACTERISTIC_DIMS], T::from_f64(2.0)),
                bias: Tensor::filled(&[CHARACTERISTIC_DIMS], T::from_f64(-1.0)),
            },
            Framework::Cvae => Prior::Mlp(Mlp::new(arch.labels, arch.mlp_width, arch.latent, rng)),
            Framework::VaeCls => Prior::Standard,
        }
    }

    /// Prior means for `n` label rows (`y` is `n x labels`, entries 0/1).
    pub fn mean(&self, y: &[T], n: usize, latent: usize) -> (Vec<T>, Option<MlpCache<T>>) {
        match self {
            Prior::Elementwise { weight, bias } => {
                let labels = y.len() / n.max(1);
                let mut out = vec![T::ZERO; n * latent];
                for b in 0..n {
                    for i in 0..CHARACTERISTIC_DIMS {
                        out[b * latent + i] = weight.data[i] * y[b * labels + i] + bias.data[i];
                    }
                }
                (out, None)
            }
            Prior::Mlp(mlp) => {
                let (out, cache) = mlp.forward(y, n);
                (out, Some(cache))
            }
            Prior::Standard => (vec![T::ZERO; n * latent], None),
        }
    }

    pub fn backward(&self, dmean: &[T], y: &[T], n: usize, latent: usize, cache: Option<&MlpCache<T>>, grad: &mut Self) {
        match (self, grad) {
            (Prior::Elementwise { .. }, Prior::Elementwise { weight: gw, bias: gb }) => {
                let labels = y.len() / n.max(1);
                for b in 0..n {
                    for i in 0..CHARACTERISTIC_DIMS {
                        let d = dmean[b * latent + i];
                        gw.data[i] += d * y[b * labels + i];
                        gb.data[i] += d;
                    }
                }
            }
            (Prior::Mlp(mlp), Prior::Mlp(g)) => {
                mlp.backward(dmean, y, cache.expect("prior cache"), n, g);
            }
            (Prior::Standard, Prior::Standard) => {}
            _ => panic!("gradient holder does not match prior kind"),
        }
    }
}

/// Label classifier over latent codes.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier<T> {
    /// `p_i = sigmoid(scale_i * z_i + offset_i)` for `i` in the characteristic
    /// partition; label `i` sees latent `i` only.
    Diagonal { scale: Tensor<T>, offset: Tensor<T> },
    /// MLP over all latent dims followed by a sigmoid per label.
    Mlp(Mlp<T>),
}

#[derive(Debug, Clone)]
pub struct ClassifierTrace<T> {
    /// Sigmoid outputs before clamping.
    raw: Vec<T>,
    mlp: Option<MlpCache<T>>,
}

impl<T: Real> Classifier<T> {
    pub fn new(framework: Framework, arch: &Architecture, rng: &mut Stream) -> Self {
        match framework {
            Framework::Ccvae => Classifier::Diagonal {
                scale: Tensor::filled(&[CHARACTERISTIC_DIMS], T::ONE),
                offset: Tensor::zeros(&[CHARACTERISTIC_DIMS]),
            },
            Framework::Cvae | Framework::VaeCls => Classifier::Mlp(Mlp::new(arch.latent, arch.mlp_width, arch.labels, rng)),
        }
    }

    /// Clamped probabilities for `n` latent rows of width `latent`.
    pub fn forward(&self, z: &[T], n: usize, latent: usize) -> (Vec<T>, ClassifierTrace<T>) {
        let (raw, mlp) = match self {
            Classifier::Diagonal { scale, offset } => {
                let mut raw = Vec::with_capacity(n * CHARACTERISTIC_DIMS);
                for b in 0..n {
                    for i in 0..CHARACTERISTIC_DIMS {
                        raw.push(sigmoid(scale.data[i] * z[b * latent + i] + offset.data[i]));
                    }
                }
                (raw, None)
            }
            Classifier::Mlp(mlp) => {
                let (logits, cache) = mlp.forward(z, n);
                (logits.into_iter().map(sigmoid).collect(), Some(cache))
            }
        };
        let (lo, hi) = (T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS));
        let probs = raw.iter().map(|p| if *p < lo { lo } else if *p > hi { hi } else { *p }).collect();
        (probs, ClassifierTrace { raw, mlp })
    }

    /// Backpropagate `dprobs` (gradient with respect to the clamped
    /// probabilities). Returns the gradient with respect to `z`.
    pub fn backward(&self, dprobs: &[T], z: &[T], n: usize, latent: usize, trace: &ClassifierTrace<T>, grad: &mut Self) -> Vec<T> {
        let (lo, hi) = (T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS));
        let dlogit: Vec<T> = dprobs
            .iter()
            .zip(&trace.raw)
            .map(|(g, p)| if *p < lo || *p > hi { T::ZERO } else { *g * *p * (T::ONE - *p) })
            .collect();
        let mut dz = vec![T::ZERO; n * latent];
        match (self, grad) {
            (Classifier::Diagonal { scale, .. }, Classifier::Diagonal { scale: gs, offset: go }) => {
                for b in 0..n {
                    for i in 0..CHARACTERISTIC_DIMS {
                        let d = dlogit[b * CHARACTERISTIC_DIMS + i];
                        gs.data[i] += d * z[b * latent + i];
                        go.data[i] += d;
                        dz[b * latent + i] = d * scale.data[i];
                    }
                }
            }
            (Classifier::Mlp(mlp), Classifier::Mlp(g)) => {
                dz = mlp.backward(&dlogit, z, trace.mlp.as_ref().expect("mlp cache"), n, g);
            }
            _ => panic!("gradient holder does not match classifier kind"),
        }
        dz
    }
}
