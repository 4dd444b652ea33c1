use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::signal::SignalEpoch;
use super::{CHANNELS, PADDED_SIDE};

/// Pearson correlation matrix between channels, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    pub n: usize,
    pub values: Vec<f32>,
}

/// `64 x 64` zero-padded connectivity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedObservation {
    pub values: Vec<f32>,
}

impl ConnectivityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n + j]
    }

    /// Checks symmetry, unit diagonal, range and positive semi-definiteness.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.n;
        if self.values.len() != n * n {
            return Err(Error::Degenerate(format!("expected {} entries, got {}", n * n, self.values.len())));
        }
        for i in 0..n {
            if (self.get(i, i) as f64 - 1.0).abs() > tol {
                return Err(Error::Degenerate(format!("diagonal entry {i} is {}", self.get(i, i))));
            }
            for j in 0..n {
                let v = self.get(i, j) as f64;
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Degenerate(format!("entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if (v - self.get(j, i) as f64).abs() > tol {
                    return Err(Error::Degenerate(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        let min = self.min_eigenvalue();
        if min < -tol {
            return Err(Error::Degenerate(format!("smallest eigenvalue {min} is negative")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j) as f64);
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn correlation_from_covariance(cov: &[f64], n: usize) -> Vec<f64> {
    let sd: Vec<f64> = (0..n).map(|i| cov[i * n + i].sqrt()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in i + 1..n {
            let r = (cov[i * n + j] / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            out[i * n + j] = r;
            out[j * n + i] = r;
        }
    }
    out
}

/// Sample Pearson correlation of every channel pair.
pub fn compute_connectivity(epoch: &SignalEpoch) -> Result<ConnectivityMatrix> {
    let n = epoch.channels;
    let t = epoch.len();
    if t < 2 {
        return Err(Error::Degenerate("an epoch needs at least two samples".into()));
    }
    let mut centered = Vec::with_capacity(n * t);
    for i in 0..n {
        let ch = epoch.channel(i);
        let mean = ch.iter().sum::<f64>() / t as f64;
        centered.extend(ch.iter().map(|v| v - mean));
    }
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        let a = &centered[i * t..(i + 1) * t];
        for j in i..n {
            let b = &centered[j * t..(j + 1) * t];
            let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            cov[i * n + j] = c;
            cov[j * n + i] = c;
        }
    }
    if let Some(channel) = (0..n).find(|i| cov[i * n + i] <= 0.0 || !cov[i * n + i].is_finite()) {
        return Err(Error::ZeroVariance { channel });
    }
    let values = correlation_from_covariance(&cov, n).into_iter().map(|v| v as f32).collect();
    Ok(ConnectivityMatrix { n, values })
}

pub fn pad_observation(c: &ConnectivityMatrix) -> PaddedObservation {
    assert_eq!(c.n, CHANNELS, "padding expects a {CHANNELS}-channel matrix");
    let mut values = vec![0.0f32; PADDED_SIDE * PADDED_SIDE];
    for i in 0..CHANNELS {
        values[i * PADDED_SIDE..i * PADDED_SIDE + CHANNELS].copy_from_slice(&c.values[i * CHANNELS..(i + 1) * CHANNELS]);
    }
    PaddedObservation { values }
}

/// Top-left `61 x 61` block of a padded matrix (any `64 x 64` image).
pub fn unpad_observation(p: &[f32]) -> ConnectivityMatrix {
    assert_eq!(p.len(), PADDED_SIDE * PADDED_SIDE, "padded observation size");
    let mut values = Vec::with_capacity(CHANNELS * CHANNELS);
    for i in 0..CHANNELS {
        values.extend_from_slice(&p[i * PADDED_SIDE..i * PADDED_SIDE + CHANNELS]);
    }
    ConnectivityMatrix { n: CHANNELS, values }
}

impl PaddedObservation {
    /// Padding region exactly zero and the inner block a valid matrix.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for i in 0..PADDED_SIDE {
            for j in 0..PADDED_SIDE {
                if (i >= CHANNELS || j >= CHANNELS) && self.values[i * PADDED_SIDE + j] != 0.0 {
                    return Err(Error::Degenerate(format!("padding entry ({i},{j}) is nonzero")));
                }
            }
        }
        unpad_observation(&self.values).validate(tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normals, stream, Domain};
    use proptest::prelude::*;

    fn epoch(channels: usize, samples: Vec<f64>) -> SignalEpoch {
        SignalEpoch { channels, samples, subject_id: 0, trial_id: 0 }
    }

    #[test]
    fn perfect_linear_correlation() {
        let c = compute_connectivity(&epoch(2, vec![0.0, 1.0, 2.0, 0.0, 2.0, 4.0])).unwrap();
        assert_eq!(c.get(0, 1), 1.0);
        assert_eq!(c.get(0, 0), 1.0);
        let c = compute_connectivity(&epoch(2, vec![0.0, 1.0, 2.0, 0.0, -2.0, -4.0])).unwrap();
        assert_eq!(c.get(0, 1), -1.0);
    }

    #[test]
    fn zero_variance_names_channel() {
        let r = compute_connectivity(&epoch(3, vec![0.0, 1.0, 2.0, 5.0, 5.0, 5.0, 1.0, 0.0, 1.0]));
        assert!(matches!(r, Err(Error::ZeroVariance { channel: 1 })));
    }

    #[test]
    fn matches_direct_formula_on_integer_epoch() {
        // 4 channels, T = 16 integer samples; reference evaluates
        // cov / sqrt(var var) with explicit means in f64.
        let mut rng = stream(3, Domain::Eval, 0, 0);
        let samples: Vec<f64> = normals(&mut rng, 64).into_iter().map(|v| (v * 4.0).round()).collect();
        let e = epoch(4, samples.clone());
        let c = compute_connectivity(&e).unwrap();
        let t = 16.0;
        let ch = |i: usize| &samples[i * 16..(i + 1) * 16];
        let mean = |v: &[f64]| v.iter().sum::<f64>() / t;
        let cov = |a: &[f64], b: &[f64]| {
            let (ma, mb) = (mean(a), mean(b));
            a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (t - 1.0)
        };
        for i in 0..4 {
            for j in 0..4 {
                let r = cov(ch(i), ch(j)) / (cov(ch(i), ch(i)) * cov(ch(j), ch(j))).sqrt();
                assert!((c.get(i, j) as f64 - r).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn padding_contract() {
        let mut values = vec![0.0f32; CHANNELS * CHANNELS];
        for i in 0..CHANNELS {
            values[i * CHANNELS + i] = 1.0;
        }
        values[1] = 0.25;
        values[CHANNELS] = 0.25;
        let c = ConnectivityMatrix { n: CHANNELS, values };
        let p = pad_observation(&c);
        assert_eq!(p.values[0], 1.0);
        assert_eq!(p.values[63 * 64 + 63], 0.0);
        assert_eq!(unpad_observation(&p.values), c);
        let s1: f64 = c.values.iter().map(|v| *v as f64).sum();
        let s2: f64 = p.values.iter().map(|v| *v as f64).sum();
        assert_eq!(s1, s2);
        p.validate(1e-6).unwrap();
    }

    proptest! {
        #[test]
        fn invariant_under_positive_affine_rescaling(
            seed in 0u64..1000,
            scales in proptest::collection::vec(0.01f64..100.0, 5),
            shifts in proptest::collection::vec(-50.0f64..50.0, 5),
        ) {
            let mut rng = stream(seed, Domain::Eval, 1, 0);
            let samples = normals(&mut rng, 5 * 32);
            let a = compute_connectivity(&epoch(5, samples.clone())).unwrap();
            let rescaled: Vec<f64> = samples
                .iter()
                .enumerate()
                .map(|(k, v)| v * scales[k / 32] + shifts[k / 32])
                .collect();
            let b = compute_connectivity(&epoch(5, rescaled)).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
