//! Latent intervention: resample one label-bound latent at both label values,
//! keep everything else fixed, and average the decoded differences.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::labels::{LabelVector, LABEL_NAMES, N_LABELS};
use crate::models::{Framework, ModelParams};
use crate::rng::{normal, stream, Domain};
use crate::synthdata::{CHANNELS, PADDED_SIDE};

pub const DEFAULT_PAIRS: usize = 1000;

const PAIRS_PER_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub target_label: usize,
    /// Values of the non-target labels; the target slot is ignored.
    pub fixed_labels: [bool; N_LABELS],
    pub n_pairs: usize,
    pub seed: u64,
}

impl InterventionSpec {
    /// `fixed` must name both non-target labels.
    pub fn new(target_label: usize, fixed: &[(usize, bool)], n_pairs: usize, seed: u64) -> Result<Self> {
        if target_label >= N_LABELS {
            return Err(Error::Config(format!("target label index {target_label} out of range")));
        }
        let mut fixed_labels = [false; N_LABELS];
        let mut seen = [false; N_LABELS];
        for &(i, v) in fixed {
            if i >= N_LABELS || i == target_label || seen[i] {
                return Err(Error::Config(format!("invalid or repeated fixed label index {i}")));
            }
            seen[i] = true;
            fixed_labels[i] = v;
        }
        if let Some(missing) = (0..N_LABELS).find(|i| *i != target_label && !seen[*i]) {
            return Err(Error::Config(format!("fixed value for {} is required", LABEL_NAMES[missing])));
        }
        let spec = Self { target_label, fixed_labels, n_pairs, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_label >= N_LABELS {
            return Err(Error::Config(format!("target label index {} out of range", self.target_label)));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        self.labels_with(true)?;
        self.labels_with(false)?;
        Ok(())
    }

    /// The label vector with the target set to `value`; fails if either
    /// intervention arm violates hallucinations => schizophrenia.
    pub fn labels_with(&self, value: bool) -> Result<LabelVector> {
        let mut bits = self.fixed_labels;
        bits[self.target_label] = value;
        LabelVector::new(bits[0], bits[1], bits[2]).map_err(|_| {
            Error::Config(format!(
                "intervening on {} with fixed labels {:?} produces hallucinations without schizophrenia",
                LABEL_NAMES[self.target_label], self.fixed_labels
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectMap {
    pub side: usize,
    /// `side x side`, mean of `decode(y=1) - decode(y=0)`, symmetrized.
    pub diff: Vec<f64>,
    /// Standard error of each entry of `diff` across pairs.
    pub stderr: Vec<f64>,
    pub n_pairs: usize,
    pub spec: InterventionSpec,
}

impl EffectMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.diff[i * self.side + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.diff.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.diff.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|diff| / stderr` over entries with nonzero spread.
    pub fn max_z_score(&self) -> f64 {
        self.diff
            .iter()
            .zip(&self.stderr)
            .filter(|(_, s)| **s > 0.0)
            .fold(0.0, |m, (d, s)| m.max(d.abs() / s))
    }

    /// `diff.f32` (little-endian, row-major) and `diff.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let bytes: Vec<u8> = self.diff.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        let bin = dir.join("diff.f32");
        std::fs::write(&bin, bytes).at(&bin)?;
        let csv_path = dir.join("diff.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
        for row in self.diff.chunks(self.side) {
            w.write_record(row.iter().map(|v| format!("{v:.6e}"))).map_err(|e| csv_error(&csv_path, e))?;
        }
        w.flush().at(&csv_path)?;
        let meta = dir.join("effect.json");
        std::fs::write(&meta, serde_json::to_vec_pretty(&EffectSummary::from(self))?).at(&meta)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct EffectSummary<'a> {
    target: &'a str,
    spec: &'a InterventionSpec,
    n_pairs: usize,
    side: usize,
    max_abs: f64,
    norm: f64,
}

impl<'a> From<&'a EffectMap> for EffectSummary<'a> {
    fn from(m: &'a EffectMap) -> Self {
        Self {
            target: LABEL_NAMES[m.spec.target_label],
            spec: &m.spec,
            n_pairs: m.n_pairs,
            side: m.side,
            max_abs: m.max_abs(),
            norm: m.norm(),
        }
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
}

/// Cosine similarity of two equally sized maps; 0 if either is all zeros.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "maps differ in size");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Decoded difference between the two arms of `spec`.
///
/// CCVAE: the non-characteristic dims are standard-normal draws and the
/// non-target characteristic dims come from the conditional prior under the
/// fixed labels, shared by both arms; the target dim is drawn independently
/// from its prior at y=1 and at y=0. CVAE has no partition, so both arms share
/// one standard-normal offset around their respective prior means.
pub fn intervention_analysis(params: &ModelParams<f32>, spec: &InterventionSpec) -> Result<EffectMap> {
    spec.validate()?;
    if !params.framework.has_conditional_prior() {
        return Err(Error::Unsupported {
            framework: params.framework.to_string(),
            reason: "no conditional prior to sample".into(),
        });
    }
    let arch = &params.arch;
    let latent = arch.latent;
    let side = arch.side;
    let out_side = if side == PADDED_SIDE { CHANNELS } else { side };
    let prior1 = params.conditional_prior(&spec.labels_with(true)?);
    let prior0 = params.conditional_prior(&spec.labels_with(false)?);
    let independent_target = params.framework == Framework::Ccvae;
    let t = spec.target_label;

    let mut rng = stream(spec.seed, Domain::Intervention, t as u64, 0);
    let cells = out_side * out_side;
    let mut sum = vec![0.0f64; cells];
    let mut sumsq = vec![0.0f64; cells];
    let mut pair = vec![0.0f64; cells];
    let mut done = 0;
    while done < spec.n_pairs {
        let b = PAIRS_PER_BATCH.min(spec.n_pairs - done);
        // Rows 2k and 2k+1 are the y=1 and y=0 arms of pair k.
        let mut z = vec![0.0f32; 2 * b * latent];
        for k in 0..b {
            for d in 0..latent {
                let e = normal(&mut rng) as f32;
                z[2 * k * latent + d] = prior1.mean[d] + prior1.std[d] * e;
                z[(2 * k + 1) * latent + d] = prior0.mean[d] + prior0.std[d] * e;
            }
            if independent_target {
                let e = normal(&mut rng) as f32;
                z[(2 * k + 1) * latent + t] = prior0.mean[t] + prior0.std[t] * e;
            }
        }
        let xhat = params.decode_batch(&z, 2 * b);
        let pixels = side * side;
        for k in 0..b {
            let x1 = &xhat[2 * k * pixels..(2 * k + 1) * pixels];
            let x0 = &xhat[(2 * k + 1) * pixels..(2 * k + 2) * pixels];
            for i in 0..out_side {
                for j in 0..out_side {
                    pair[i * out_side + j] = (x1[i * side + j] - x0[i * side + j]) as f64;
                }
            }
            for i in 0..out_side {
                for j in i..out_side {
                    let v = 0.5 * (pair[i * out_side + j] + pair[j * out_side + i]);
                    for c in [i * out_side + j, j * out_side + i] {
                        sum[c] += v;
                        sumsq[c] += v * v;
                    }
                    if i == j {
                        sum[i * out_side + j] -= v;
                        sumsq[i * out_side + j] -= v * v;
                    }
                }
            }
        }
        done += b;
    }
    let n = spec.n_pairs as f64;
    let diff: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = if spec.n_pairs > 1 {
        sumsq
            .iter()
            .zip(&diff)
            .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect()
    } else {
        vec![0.0; cells]
    };
    if diff.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { term: "effect map".into() });
    }
    Ok(EffectMap { side: out_side, diff, stderr, n_pairs: spec.n_pairs, spec: spec.clone() })
}
