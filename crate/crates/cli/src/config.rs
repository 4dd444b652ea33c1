//! Experiment configuration: one JSON document with `data`, `model`, `train`
//! and `analysis` sections. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use factorlens::analysis::{InterventionSpec, DEFAULT_PAIRS};
use factorlens::labels::{label_index, LABEL_NAMES, N_LABELS};
use factorlens::models::{CHARACTERISTIC_DIMS, LATENT_DIM};
use factorlens::synthdata::CohortConfig;
use factorlens::training::TrainConfig;
use factorlens::{Error, Framework, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable consulted for any seed left unset by flags and file.
pub const SEED_ENV: &str = "FACTORLENS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub cohort: CohortConfig,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { cohort: CohortConfig::default(), n_train: 9000, n_test: 2000 }
    }
}

/// `latent_dim` and `characteristic_dims` echo the fixed latent layout; they
/// are checked, not configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub framework: Framework,
    pub latent_dim: usize,
    pub characteristic_dims: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { framework: Framework::Ccvae, latent_dim: LATENT_DIM, characteristic_dims: CHARACTERISTIC_DIMS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionConfig {
    pub target: String,
    /// Label name to value for the two non-target labels.
    pub fixed: BTreeMap<String, bool>,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
}

fn default_pairs() -> usize {
    DEFAULT_PAIRS
}

impl InterventionConfig {
    pub fn to_spec(&self, seed: u64) -> Result<InterventionSpec> {
        let target = label_index(&self.target).ok_or_else(|| Error::Config(format!("unknown label `{}`", self.target)))?;
        let mut fixed = Vec::new();
        for (name, v) in &self.fixed {
            let i = label_index(name).ok_or_else(|| Error::Config(format!("unknown label `{name}`")))?;
            fixed.push((i, *v));
        }
        InterventionSpec::new(target, &fixed, self.n_pairs, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub interventions: Vec<InterventionConfig>,
    pub seed: u64,
    /// Which checkpoint `eval` and `intervene` read.
    pub checkpoint: String,
    /// Posterior-cloud axes; defaults to the pathology latents.
    pub cloud_dims: Option<[usize; 2]>,
    pub plot: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let scenario = |target: &str, fixed: [(&str, bool); 2]| InterventionConfig {
            target: target.into(),
            fixed: fixed.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            n_pairs: DEFAULT_PAIRS,
        };
        Self {
            interventions: vec![
                scenario("schizophrenia", [("listening", true), ("hallucinations", false)]),
                scenario("hallucinations", [("listening", true), ("schizophrenia", true)]),
            ],
            seed: 0,
            checkpoint: "final".into(),
            cloud_dims: None,
            plot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub analysis: AnalysisSection,
}

const SEED_PATHS: [[&str; 3]; 3] = [["data", "cohort", "master_seed"], ["train", "seed", ""], ["analysis", "seed", ""]];

fn has_path(v: &Value, path: &[&str]) -> bool {
    let mut cur = v;
    for key in path.iter().filter(|k| !k.is_empty()) {
        match cur.get(key) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

impl ExperimentConfig {
    /// Parse a config document; seeds it leaves unset fall back to
    /// `env_seed`.
    pub fn from_json(text: &str, env_seed: Option<u64>) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let mut cfg: Self = serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = env_seed {
            for path in SEED_PATHS {
                if !has_path(&raw, &path) {
                    cfg.set_seed(&path, seed);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, env_seed: Option<u64>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
                Self::from_json(&text, env_seed)
            }
            None => Self::from_json("{}", env_seed),
        }
    }

    fn set_seed(&mut self, path: &[&str; 3], seed: u64) {
        match path[0] {
            "data" => self.data.cohort.master_seed = seed,
            "train" => self.train.seed = seed,
            _ => self.analysis.seed = seed,
        }
    }

    /// Apply one seed to every stage (the `--seed` flag).
    pub fn override_seed(&mut self, seed: u64) {
        for path in SEED_PATHS {
            self.set_seed(&path, seed);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.cohort.validate()?;
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(Error::Config("data.n_train and data.n_test must be positive".into()));
        }
        if self.model.latent_dim != LATENT_DIM || self.model.characteristic_dims != CHARACTERISTIC_DIMS {
            return Err(Error::Config(format!(
                "model.latent_dim/characteristic_dims are fixed at {LATENT_DIM}/{CHARACTERISTIC_DIMS}"
            )));
        }
        self.train.validate()?;
        for iv in &self.analysis.interventions {
            iv.to_spec(self.analysis.seed)?;
        }
        if let Some(d) = self.analysis.cloud_dims {
            if d.iter().any(|i| *i >= LATENT_DIM) {
                return Err(Error::Config(format!("analysis.cloud_dims must index the {LATENT_DIM} latents")));
            }
        }
        Ok(())
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) if !s.trim().is_empty() => {
            s.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))
        }
        _ => Ok(None),
    }
}

/// `listening=1,schizophrenia=0` style assignments.
pub fn parse_fixed(text: &str) -> Result<BTreeMap<String, bool>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = part.split_once('=').ok_or_else(|| Error::Config(format!("expected name=value, got `{part}`")))?;
        let idx = label_index(name.trim()).ok_or_else(|| Error::Config(format!("unknown label `{name}`")))?;
        let v = match value.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::Config(format!("label values are 0/1, got `{other}`"))),
        };
        out.insert(LABEL_NAMES[idx].to_string(), v);
    }
    if out.len() > N_LABELS - 1 {
        return Err(Error::Config("at most two labels can be fixed".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::from_json("{}", None).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text, None).unwrap(), cfg);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!((cfg.train.batch_size, cfg.train.epochs), (32, 100));
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let err = ExperimentConfig::from_json(r#"{"train": {"learning_rat": 0.1}}"#, None).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"extra": 1}"#, None).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn env_seed_fills_only_unset_seeds() {
        let cfg = ExperimentConfig::from_json(r#"{"train": {"seed": 3}}"#, Some(9)).unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.data.cohort.master_seed, 9);
        assert_eq!(cfg.analysis.seed, 9);
    }

    #[test]
    fn fixed_assignments() {
        let f = parse_fixed("listening=1, sz=0").unwrap();
        assert_eq!(f.get("listening"), Some(&true));
        assert_eq!(f.get("schizophrenia"), Some(&false));
        assert!(parse_fixed("listening=2").is_err());
        assert!(parse_fixed("nope=1").is_err());
    }

    #[test]
    fn constraint_violation_is_rejected() {
        let iv = InterventionConfig {
            target: "listening".into(),
            fixed: parse_fixed("hallucinations=1,schizophrenia=0").unwrap(),
            n_pairs: 10,
        };
        assert!(matches!(iv.to_spec(0), Err(Error::Config(_))));
    }
}
