//! Logistic probe on posterior means and the latent/label confusion matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, N_LABELS};
use crate::models::ModelParams;
use crate::real::softplus;
use crate::rng::{normal, stream, Domain};
use crate::synthdata::Dataset;

use super::metrics::posterior_means;

/// Ridge penalty on the probe weights (the bias is unpenalized); keeps
/// separable labels from driving the weights to infinity.
///
/// Features are centred but deliberately not rescaled: the confusion matrix
/// perturbs latents in their own units, and standardizing would hand a
/// collapsed coordinate (posterior means spread ~0.04) an enormous weight
/// that a unit-variance replacement then exploits.
pub const PROBE_RIDGE: f64 = 1.0;

const NEWTON_STEPS: usize = 50;

/// One logistic regression per label over the full latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticProbe {
    pub dims: usize,
    /// `labels x dims`, acting on centred features.
    pub weight: Vec<f64>,
    pub bias: [f64; N_LABELS],
    pub feature_mean: Vec<f64>,
    pub trained: bool,
}

impl LogisticProbe {
    pub fn untrained(dims: usize) -> Self {
        Self {
            dims,
            weight: vec![0.0; N_LABELS * dims],
            bias: [0.0; N_LABELS],
            feature_mean: vec![0.0; dims],
            trained: false,
        }
    }

    /// A probe with given weights on uncentred features.
    pub fn from_weights(dims: usize, weight: Vec<f64>, bias: [f64; N_LABELS]) -> Result<Self> {
        if weight.len() != N_LABELS * dims {
            return Err(Error::Config(format!("probe weight needs {} entries", N_LABELS * dims)));
        }
        Ok(Self { dims, weight, bias, feature_mean: vec![0.0; dims], trained: true })
    }

    /// Ridge-regularized Newton fit; `latents` is `n x dims` row-major.
    pub fn fit(latents: &[f64], dims: usize, labels: &[LabelVector]) -> Result<Self> {
        Self::fit_with(latents, dims, labels, PROBE_RIDGE)
    }

    pub fn fit_with(latents: &[f64], dims: usize, labels: &[LabelVector], ridge: f64) -> Result<Self> {
        let n = labels.len();
        if n < 2 || latents.len() != n * dims {
            return Err(Error::InsufficientData("probe needs at least 2 latent rows matching the labels".into()));
        }
        let mut probe = Self::untrained(dims);
        for d in 0..dims {
            probe.feature_mean[d] = (0..n).map(|i| latents[i * dims + d]).sum::<f64>() / n as f64;
        }
        let p = dims + 1;
        let mut design = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for d in 0..dims {
                design[(i, d)] = latents[i * dims + d] - probe.feature_mean[d];
            }
            design[(i, dims)] = 1.0;
        }
        for j in 0..N_LABELS {
            let y = DVector::from_iterator(n, labels.iter().map(|l| l.get(j) as u8 as f64));
            let mut beta = DVector::<f64>::zeros(p);
            for _ in 0..NEWTON_STEPS {
                let eta = &design * &beta;
                let mu = eta.map(crate::real::sigmoid::<f64>);
                let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
                let mut grad = design.transpose() * (&mu - &y);
                let mut hess = design.transpose() * DMatrix::from_diagonal(&w) * &design;
                for d in 0..dims {
                    grad[d] += ridge * beta[d];
                    hess[(d, d)] += ridge;
                }
                hess[(dims, dims)] += 1e-9;
                let step = hess
                    .cholesky()
                    .ok_or_else(|| Error::Numerical { term: "probe Hessian".into() })?
                    .solve(&grad);
                beta -= &step;
                if step.amax() < 1e-10 {
                    break;
                }
            }
            if beta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical { term: "probe weights".into() });
            }
            probe.weight[j * dims..(j + 1) * dims].copy_from_slice(&beta.as_slice()[..dims]);
            probe.bias[j] = beta[dims];
        }
        probe.trained = true;
        Ok(probe)
    }

    /// Fit on the posterior means of a (training) split.
    pub fn fit_on(params: &ModelParams<f32>, data: &Dataset) -> Result<Self> {
        let z: Vec<f64> = posterior_means(params, data).iter().map(|v| *v as f64).collect();
        Self::fit(&z, params.arch.latent, &data.labels)
    }

    pub fn logit(&self, z: &[f64], label: usize) -> f64 {
        let w = &self.weight[label * self.dims..(label + 1) * self.dims];
        self.bias[label]
            + (0..self.dims).map(|d| w[d] * (z[d] - self.feature_mean[d])).sum::<f64>()
    }

    /// `log p(y_label = value | z)`.
    pub fn log_prob(&self, z: &[f64], label: usize, value: bool) -> f64 {
        let s = self.logit(z, label);
        -softplus(if value { -s } else { s })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `labels x latent dims`.
    pub values: Vec<Vec<f64>>,
    pub tie_break: String,
}

impl ConfusionMatrix {
    /// Column of the largest entry per label row, lowest index on ties.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.values
            .iter()
            .map(|row| {
                let mut best = 0;
                for (d, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = d;
                    }
                }
                best
            })
            .collect()
    }
}

/// Noise for an item is keyed by its content, so the matrix does not depend
/// on the order of the test points.
fn item_key(x: &[f32]) -> u64 {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Mean absolute change of each label's probe log-probability (at the
/// observed label value) when one latent coordinate of the posterior mean is
/// replaced by a fresh standard-normal draw.
pub fn confusion_from_latents(probe: &LogisticProbe, latents: &[f64], labels: &[LabelVector], keys: &[u64], seed: u64) -> Result<ConfusionMatrix> {
    if !probe.trained {
        return Err(Error::Model("confusion matrix needs a trained probe".into()));
    }
    let dims = probe.dims;
    let n = labels.len();
    if n == 0 || latents.len() != n * dims || keys.len() != n {
        return Err(Error::InsufficientData("confusion matrix needs a non-empty test set".into()));
    }
    let mut values = vec![vec![0.0; dims]; N_LABELS];
    let mut z = vec![0.0; dims];
    for i in 0..n {
        let m = &latents[i * dims..(i + 1) * dims];
        let mut rng = stream(seed, Domain::Confusion, keys[i], 0);
        let base: Vec<f64> = (0..N_LABELS).map(|j| probe.log_prob(m, j, labels[i].get(j))).collect();
        for d in 0..dims {
            z.copy_from_slice(m);
            z[d] = normal(&mut rng);
            for j in 0..N_LABELS {
                values[j][d] += (probe.log_prob(&z, j, labels[i].get(j)) - base[j]).abs();
            }
        }
    }
    for row in &mut values {
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(ConfusionMatrix { values, tie_break: "lowest-index".into() })
}

pub fn confusion_matrix(params: &ModelParams<f32>, probe: &LogisticProbe, test: &Dataset, seed: u64) -> Result<ConfusionMatrix> {
    if probe.dims != params.arch.latent {
        return Err(Error::Incompatible(format!("probe has {} inputs, model has {} latents", probe.dims, params.arch.latent)));
    }
    if !probe.trained {
        return Err(Error::Model("confusion matrix needs a trained probe".into()));
    }
    let z: Vec<f64> = posterior_means(params, test).iter().map(|v| *v as f64).collect();
    let keys: Vec<u64> = (0..test.len()).map(|i| item_key(test.observation(i))).collect();
    confusion_from_latents(probe, &z, &test.labels, &keys, seed)
}
