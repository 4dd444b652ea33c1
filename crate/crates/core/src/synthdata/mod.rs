//! Synthetic multichannel cohorts with planted, label-dependent connectivity
//! effects.
//!
//! Channel layout: `0..30` left hemisphere, `30..60` right hemisphere, `60`
//! midline. The first half of the right hemisphere (`30..45`) plays the role
//! of the right frontotemporal block.

mod connectivity;
mod dataset;
mod io;
mod signal;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use connectivity::{compute_connectivity, pad_observation, unpad_observation, ConnectivityMatrix, PaddedObservation};
pub use dataset::{generate_dataset, oracle_effect_map, oracle_effect_stats, Dataset, EffectStats, Manifest, Split};
pub use io::{load_dataset, load_effects, read_manifest, save_dataset, SCHEMA_VERSION};
pub use signal::{simulate_epoch, GroundTruthEffects, Population, SignalEpoch, SubjectProfile};

pub const CHANNELS: usize = 61;
pub const PADDED_SIDE: usize = 64;
pub const FACTORS: usize = 8;
pub const DEFAULT_EPOCH_LENGTH: usize = 128;

pub const LEFT: Range<usize> = 0..30;
pub const RIGHT: Range<usize> = 30..60;
pub const MIDLINE: usize = 60;
pub const RIGHT_FRONTOTEMPORAL: Range<usize> = 30..45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    /// Subjects per cohort: healthy, schizophrenia only, schizophrenia with
    /// hallucinations.
    pub n_subjects_per_cohort: [usize; 3],
    pub trials_per_subject: usize,
    pub epoch_length: usize,
    /// Effect magnitudes for listening, schizophrenia, hallucinations.
    pub effect_scales: [f64; 3],
    pub noise_scale: f64,
    /// Spread of per-subject deviations from the population mixing.
    pub subject_variability: f64,
    pub master_seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects_per_cohort: [52, 15, 14],
            trials_per_subject: 140,
            epoch_length: DEFAULT_EPOCH_LENGTH,
            effect_scales: [0.5, 1.0, 1.5],
            noise_scale: 1.0,
            subject_variability: 0.3,
            master_seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects_per_cohort.contains(&0) {
            return Err(Error::Config("every cohort needs at least one subject".into()));
        }
        if self.trials_per_subject == 0 {
            return Err(Error::Config("trials_per_subject must be positive".into()));
        }
        if self.epoch_length < 2 {
            return Err(Error::Config("epoch_length must be at least 2".into()));
        }
        let reals = self.effect_scales.iter().chain([&self.noise_scale, &self.subject_variability]);
        if reals.into_iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn total_subjects(&self) -> usize {
        self.n_subjects_per_cohort.iter().sum()
    }

    pub fn total_trials(&self) -> usize {
        self.total_subjects() * self.trials_per_subject
    }

    /// Cohort of a subject id (subjects are numbered cohort by cohort).
    pub fn cohort_of(&self, subject: usize) -> usize {
        let [hc, sz, _] = self.n_subjects_per_cohort;
        if subject < hc {
            0
        } else if subject < hc + sz {
            1
        } else {
            2
        }
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
