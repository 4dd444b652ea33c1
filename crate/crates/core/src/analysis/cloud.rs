//! Posterior samples projected onto two latent axes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, HALLUCINATIONS, SCHIZOPHRENIA};
use crate::models::{Framework, ModelParams};
use crate::rng::{normal, stream, Domain};
use crate::synthdata::Dataset;

use super::intervention::csv_error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub x: f64,
    pub y: f64,
    pub labels: LabelVector,
}

/// The pathology axes: the schizophrenia and hallucination latents.
pub fn default_cloud_dims(_framework: Framework) -> (usize, usize) {
    (SCHIZOPHRENIA, HALLUCINATIONS)
}

/// One reparameterized posterior draw per item, projected onto `dims`.
pub fn posterior_cloud(params: &ModelParams<f32>, data: &Dataset, dims: (usize, usize), seed: u64) -> Result<Vec<CloudPoint>> {
    let latent = params.arch.latent;
    if dims.0 >= latent || dims.1 >= latent {
        return Err(Error::Config(format!("cloud dims {dims:?} out of range for {latent} latents")));
    }
    let pixels = Dataset::PIXELS;
    let mut out = Vec::with_capacity(data.len());
    for (c, chunk) in data.x.chunks(100 * pixels).enumerate() {
        let n = chunk.len() / pixels;
        let post = params.encode_batch(chunk, n);
        for b in 0..n {
            let i = c * 100 + b;
            let mut rng = stream(seed, Domain::Cloud, i as u64, 0);
            let mut draw = |d: usize| {
                let e = normal(&mut rng);
                post.mean[b * latent + d] as f64 + post.std[b * latent + d] as f64 * e
            };
            let x = draw(dims.0);
            let y = draw(dims.1);
            out.push(CloudPoint { x, y, labels: data.labels[i] });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSeparation {
    /// Indexed by cohort: healthy, schizophrenia without hallucinations,
    /// schizophrenia with hallucinations.
    pub centroids: [[f64; 2]; 3],
    pub counts: [usize; 3],
    /// Root-mean-square distance to the cohort centroid.
    pub within_std: [f64; 3],
    pub mean_within_std: f64,
    pub min_between: f64,
}

impl CloudSeparation {
    pub fn separated(&self) -> bool {
        self.min_between > self.mean_within_std
    }
}

pub fn cloud_separation(points: &[CloudPoint]) -> Result<CloudSeparation> {
    let mut sums = [[0.0f64; 2]; 3];
    let mut counts = [0usize; 3];
    for p in points {
        let c = p.labels.cohort();
        sums[c][0] += p.x;
        sums[c][1] += p.y;
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::InsufficientData(format!("every cohort needs points, got {counts:?}")));
    }
    let centroids = [0, 1, 2].map(|c| [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64]);
    let mut sq = [0.0f64; 3];
    for p in points {
        let c = p.labels.cohort();
        sq[c] += (p.x - centroids[c][0]).powi(2) + (p.y - centroids[c][1]).powi(2);
    }
    let within_std = [0, 1, 2].map(|c| (sq[c] / counts[c] as f64).sqrt());
    let dist = |a: usize, b: usize| ((centroids[a][0] - centroids[b][0]).powi(2) + (centroids[a][1] - centroids[b][1]).powi(2)).sqrt();
    Ok(CloudSeparation {
        centroids,
        counts,
        within_std,
        mean_within_std: within_std.iter().sum::<f64>() / 3.0,
        min_between: dist(0, 1).min(dist(0, 2)).min(dist(1, 2)),
    })
}

/// Columns `x, y, L, S, H`.
pub fn write_cloud_csv(points: &[CloudPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["x", "y", "L", "S", "H"]).map_err(|e| csv_error(path, e))?;
    for p in points {
        let b = p.labels.bits();
        w.write_record([p.x.to_string(), p.y.to_string(), b[0].to_string(), b[1].to_string(), b[2].to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}
