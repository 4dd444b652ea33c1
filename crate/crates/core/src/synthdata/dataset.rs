use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, N_LABELS};
use crate::rng::{stream, Domain};

use super::connectivity::{compute_connectivity, pad_observation, PaddedObservation};
use super::signal::{simulate_epoch, GroundTruthEffects, Population};
use super::{CohortConfig, CHANNELS, PADDED_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Generation metadata persisted alongside the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub split: Split,
    pub count: usize,
    pub channels: usize,
    pub side: usize,
    pub labels: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: CohortConfig,
    /// Array file name to shape.
    #[serde(default)]
    pub shapes: BTreeMap<String, Vec<usize>>,
    /// Array file name to SHA-256 of its bytes.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

/// Observations are stored contiguously: item `i` occupies
/// `x[i * 4096..(i + 1) * 4096]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f32>,
    pub labels: Vec<LabelVector>,
    pub subject_ids: Vec<u32>,
    pub split: Split,
    pub manifest: Manifest,
}

impl Dataset {
    pub const PIXELS: usize = PADDED_SIDE * PADDED_SIDE;

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f32] {
        &self.x[i * Self::PIXELS..(i + 1) * Self::PIXELS]
    }

    pub fn padded(&self, i: usize) -> PaddedObservation {
        PaddedObservation { values: self.observation(i).to_vec() }
    }

    /// Fraction of items with each label set.
    pub fn label_marginals(&self) -> [f64; N_LABELS] {
        let mut m = [0.0; N_LABELS];
        for l in &self.labels {
            for (i, b) in l.bits().iter().enumerate() {
                m[i] += *b as f64;
            }
        }
        m.map(|v| v / self.len().max(1) as f64)
    }

    /// Subset selected by index, keeping the manifest (count updated).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * Self::PIXELS);
        for &i in indices {
            x.extend_from_slice(self.observation(i));
        }
        let mut manifest = self.manifest.clone();
        manifest.count = indices.len();
        manifest.checksums.clear();
        Dataset {
            x,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i]).collect(),
            split: self.split,
            manifest,
        }
    }

    pub(crate) fn consistent(&self) -> bool {
        self.x.len() == self.len() * Self::PIXELS && self.subject_ids.len() == self.len()
    }
}

pub fn cohort_labels(cohort: usize, listening: bool) -> LabelVector {
    LabelVector { listening, schizophrenia: cohort >= 1, hallucinations: cohort == 2 }
}

/// Pool every `(subject, trial)`, shuffle, and take the first `n_train`
/// trials for training and the next `n_test` for testing.
pub fn generate_dataset(config: &CohortConfig, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset, GroundTruthEffects)> {
    config.validate()?;
    let total = config.total_trials();
    if n_train + n_test > total {
        return Err(Error::Config(format!("requested {} trials but the cohort only has {total}", n_train + n_test)));
    }
    let population = Population::new(config)?;
    let mut trials: Vec<(u32, u32)> = (0..config.total_subjects() as u32)
        .flat_map(|s| (0..config.trials_per_subject as u32).map(move |t| (s, t)))
        .collect();
    trials.shuffle(&mut stream(config.master_seed, Domain::Split, 0, 0));

    let mut profiles = BTreeMap::new();
    let mut build = |split: Split, chosen: &[(u32, u32)]| -> Result<Dataset> {
        let mut x = Vec::with_capacity(chosen.len() * Dataset::PIXELS);
        let mut labels = Vec::with_capacity(chosen.len());
        let mut subject_ids = Vec::with_capacity(chosen.len());
        for &(s, t) in chosen {
            let profile = profiles.entry(s).or_insert_with(|| population.subject(config, s));
            let listening = stream(config.master_seed, Domain::Listening, s as u64, t as u64).random_bool(0.5);
            let y = cohort_labels(config.cohort_of(s as usize), listening);
            let mut rng = stream(config.master_seed, Domain::Epoch, s as u64, t as u64);
            let epoch = simulate_epoch(profile, &y, config, &population, t, &mut rng)?;
            let c = compute_connectivity(&epoch)?;
            x.extend_from_slice(&pad_observation(&c).values);
            labels.push(y);
            subject_ids.push(s);
        }
        let manifest = Manifest {
            schema_version: super::SCHEMA_VERSION,
            split,
            count: labels.len(),
            channels: CHANNELS,
            side: PADDED_SIDE,
            labels: N_LABELS,
            seed: config.master_seed,
            config_hash: config.hash(),
            config: config.clone(),
            shapes: BTreeMap::new(),
            checksums: BTreeMap::new(),
        };
        Ok(Dataset { x, labels, subject_ids, split, manifest })
    };
    let train = build(Split::Train, &trials[..n_train])?;
    let test = build(Split::Test, &trials[n_train..n_train + n_test])?;
    Ok((train, test, population.ground_truth()))
}

/// Per-entry difference of stratum means and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectStats {
    pub diff: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_on: usize,
    pub n_off: usize,
}

/// Mean unpadded connectivity with `label_index = 1` minus the mean with
/// `label_index = 0`, over items matching every `Some` entry of `fixed`.
pub fn oracle_effect_stats(dataset: &Dataset, label_index: usize, fixed: [Option<bool>; N_LABELS]) -> Result<EffectStats> {
    if label_index >= N_LABELS {
        return Err(Error::Config(format!("label index {label_index} out of range")));
    }
    let cells = CHANNELS * CHANNELS;
    let mut sum = [vec![0.0; cells], vec![0.0; cells]];
    let mut sq = [vec![0.0; cells], vec![0.0; cells]];
    let mut count = [0usize; 2];
    for (i, y) in dataset.labels.iter().enumerate() {
        let matches = fixed.iter().enumerate().all(|(j, f)| j == label_index || f.is_none_or(|v| y.get(j) == v));
        if !matches {
            continue;
        }
        let g = y.get(label_index) as usize;
        count[g] += 1;
        let obs = dataset.observation(i);
        for r in 0..CHANNELS {
            for c in 0..CHANNELS {
                let v = obs[r * PADDED_SIDE + c] as f64;
                sum[g][r * CHANNELS + c] += v;
                sq[g][r * CHANNELS + c] += v * v;
            }
        }
    }
    if count.contains(&0) {
        return Err(Error::InsufficientData(format!(
            "label {label_index} strata sizes {count:?} under {fixed:?}: both values must occur"
        )));
    }
    let mut diff = vec![0.0; cells];
    let mut stderr = vec![0.0; cells];
    for k in 0..cells {
        let mut var_of_mean = 0.0;
        let mut means = [0.0; 2];
        for g in 0..2 {
            let n = count[g] as f64;
            means[g] = sum[g][k] / n;
            if count[g] > 1 {
                var_of_mean += (sq[g][k] - n * means[g] * means[g]).max(0.0) / (n - 1.0) / n;
            }
        }
        diff[k] = means[1] - means[0];
        stderr[k] = var_of_mean.sqrt();
    }
    Ok(EffectStats { diff, stderr, n_on: count[1], n_off: count[0] })
}

pub fn oracle_effect_map(dataset: &Dataset, label_index: usize, fixed: [Option<bool>; N_LABELS]) -> Result<Vec<f64>> {
    oracle_effect_stats(dataset, label_index, fixed).map(|s| s.diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortConfig {
        CohortConfig { n_subjects_per_cohort: [4, 3, 3], trials_per_subject: 20, ..Default::default() }
    }

    #[test]
    fn sizes_and_determinism() {
        let (a, b, e) = generate_dataset(&small(), 120, 40).unwrap();
        assert_eq!((a.len(), b.len()), (120, 40));
        let (a2, b2, e2) = generate_dataset(&small(), 120, 40).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(e, e2);
        assert!(a.consistent() && b.consistent());
    }

    #[test]
    fn too_many_trials_is_config_error() {
        assert!(matches!(generate_dataset(&small(), 150, 51), Err(Error::Config(_))));
    }

    #[test]
    fn pathology_fixed_per_subject() {
        let config = small();
        let (a, _, _) = generate_dataset(&config, 200, 0).unwrap();
        for (y, s) in a.labels.iter().zip(&a.subject_ids) {
            assert_eq!(y.cohort(), config.cohort_of(*s as usize));
        }
    }

    #[test]
    fn single_cohort_has_no_contrast() {
        let (a, _, _) = generate_dataset(&small(), 200, 0).unwrap();
        let healthy: Vec<usize> = (0..a.len()).filter(|&i| a.labels[i].cohort() == 0).collect();
        let only_hc = a.subset(&healthy);
        let r = oracle_effect_map(&only_hc, 1, [None, None, None]);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }
}
