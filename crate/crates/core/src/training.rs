//! Mini-batch Adam training, checkpointing and run bookkeeping.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{accuracy, evaluate_metrics, MetricsReport};
use crate::error::{Error, IoContext, Result};
use crate::labels::N_LABELS;
use crate::models::{load_checkpoint_as, save_checkpoint, Architecture, Framework, ModelParams};
use crate::objectives::{batch_loss, labels_as, LossBreakdown, LossOptions, Noise, WeightGradient};
use crate::optim::{clip_global_norm, global_norm, Adam};
use crate::rng::{stream, Domain};
use crate::synthdata::Dataset;
use rand::seq::SliceRandom;

pub const RUN_FILE: &str = "run.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Inner draws for the `q(y|x)` estimate during training.
    pub k_train: usize,
    /// Inner draws for the `q(y|x)` estimate at evaluation.
    pub k_eval: usize,
    pub beta: f64,
    pub weight_gradient: WeightGradient,
    /// Periodic checkpoint cadence in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Global-norm safety valve; events are counted in the history.
    pub clip_norm: f64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            k_train: 10,
            k_eval: 100,
            beta: 1.0,
            weight_gradient: WeightGradient::default(),
            checkpoint_every: 10,
            clip_norm: 100.0,
            architecture: Architecture::standard(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.k_train == 0 || self.k_eval == 0 {
            return bad("k_train and k_eval must be at least 1");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        self.architecture.validate()
    }

    fn loss_options(&self) -> LossOptions {
        LossOptions { k: self.k_train, beta: self.beta, weight_gradient: self.weight_gradient }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub test: LossBreakdown,
    pub test_accuracy: f64,
    pub test_per_label_accuracy: [f64; N_LABELS],
    pub clipped_steps: usize,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub label: String,
    pub epoch: usize,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Training stopped at the first non-finite value; the parameters from
    /// before the failing step are kept as the `last_good` checkpoint.
    NumericalFailure { epoch: usize, batch: usize, term: String },
}

/// Identity of the data a run was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataIdentity {
    pub config_hash: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl DataIdentity {
    pub fn of(train: &Dataset, test: &Dataset) -> Self {
        Self {
            config_hash: train.manifest.config_hash.clone(),
            seed: train.manifest.seed,
            n_train: train.len(),
            n_test: test.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub version: String,
    pub framework: Framework,
    pub config: TrainConfig,
    pub data: DataIdentity,
    pub parameter_count: usize,
    pub history: Vec<EpochRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub best_epoch: Option<usize>,
    pub best_test_accuracy: Option<f64>,
    pub clip_events: usize,
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn checkpoint(&self, label: &str) -> Option<&CheckpointRecord> {
        self.checkpoints.iter().rev().find(|c| c.label == label)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_FILE);
        let bytes = std::fs::read(&path).at(&path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

pub struct TrainOutcome {
    /// Final parameters, or the last good ones after a numerical failure.
    pub params: ModelParams<f32>,
    pub record: RunRecord,
}

fn run_id(framework: Framework, config: &TrainConfig, data: &DataIdentity) -> String {
    let mut h = Sha256::new();
    h.update(framework.as_str());
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(serde_json::to_vec(data).expect("identity serializes"));
    hex::encode(&h.finalize()[..6])
}

/// Observations and labels of `indices`, as the model's float type.
fn gather(data: &Dataset, indices: &[usize]) -> (Vec<f32>, Vec<f32>) {
    let mut x = Vec::with_capacity(indices.len() * Dataset::PIXELS);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        x.extend_from_slice(data.observation(i));
        labels.push(data.labels[i]);
    }
    (x, labels_as(&labels))
}

fn accumulate(total: &mut LossBreakdown, part: &LossBreakdown, w: f64) {
    total.total += part.total * w;
    total.reconstruction += part.reconstruction * w;
    total.kl += part.kl * w;
    total.classification += part.classification * w;
    total.classifier_log_prob += part.classifier_log_prob * w;
    total.importance_weight_mean += part.importance_weight_mean * w;
}

fn scaled(mut b: LossBreakdown, s: f64) -> LossBreakdown {
    b.total *= s;
    b.reconstruction *= s;
    b.kl *= s;
    b.classification *= s;
    b.classifier_log_prob *= s;
    b.importance_weight_mean *= s;
    b
}

/// Mean loss over a split with fixed per-epoch noise; no gradients.
pub fn dataset_loss(params: &ModelParams<f32>, data: &Dataset, opts: &LossOptions, seed: u64, epoch: usize) -> Result<LossBreakdown> {
    let latent = params.arch.latent;
    let k = if params.framework.has_conditional_prior() { opts.k } else { 0 };
    let mut total = LossBreakdown::default();
    let idx: Vec<usize> = (0..data.len()).collect();
    for (b, chunk) in idx.chunks(EVAL_BATCH).enumerate() {
        let (x, y) = gather(data, chunk);
        let mut rng = stream(seed, Domain::Eval, epoch as u64, (1 << 32) + b as u64);
        let noise = Noise::draw(chunk.len(), k, latent, &mut rng);
        let part = batch_loss(params, &x, &y, &noise, opts, None)?;
        accumulate(&mut total, &part, chunk.len() as f64);
    }
    Ok(scaled(total, 1.0 / data.len().max(1) as f64))
}

struct RunDir<'a> {
    root: Option<&'a Path>,
}

impl RunDir<'_> {
    fn checkpoint(&self, record: &mut RunRecord, params: &ModelParams<f32>, label: &str, epoch: usize) -> Result<()> {
        let rel = Path::new(CHECKPOINT_DIR).join(label);
        if let Some(root) = self.root {
            save_checkpoint(params, &root.join(&rel))?;
        }
        record.checkpoints.retain(|c| c.label != label);
        record.checkpoints.push(CheckpointRecord { label: label.into(), epoch, path: rel, checksum: params.value_checksum() });
        Ok(())
    }

    fn persist(&self, record: &RunRecord) -> Result<()> {
        let Some(root) = self.root else { return Ok(()) };
        let path = root.join(RUN_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(record)?).at(&path)?;
        write_history_csv(&record.history, &root.join(HISTORY_FILE))
    }
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "epoch",
        "train_total",
        "train_reconstruction",
        "train_kl",
        "train_classification",
        "test_total",
        "test_reconstruction",
        "test_kl",
        "test_classification",
        "test_accuracy",
        "acc_listening",
        "acc_schizophrenia",
        "acc_hallucinations",
        "clipped_steps",
    ])
    .map_err(err)?;
    for e in history {
        let t = &e.train;
        let s = &e.test;
        let a = e.test_per_label_accuracy;
        w.write_record(
            [
                e.epoch.to_string(),
                t.total.to_string(),
                t.reconstruction.to_string(),
                t.kl.to_string(),
                t.classification.to_string(),
                s.total.to_string(),
                s.reconstruction.to_string(),
                s.kl.to_string(),
                s.classification.to_string(),
                e.test_accuracy.to_string(),
                a[0].to_string(),
                a[1].to_string(),
                a[2].to_string(),
                e.clipped_steps.to_string(),
            ]
            .iter(),
        )
        .map_err(err)?;
    }
    w.flush().at(path)
}

/// Train `framework` from a fresh seeded initialization. With `run_dir`, the
/// record, history and checkpoints (`initial`, every `checkpoint_every`
/// epochs, `best`, `final`) are written there as training proceeds.
///
/// A non-finite loss or gradient stops training; the returned record then
/// carries [`RunStatus::NumericalFailure`] and the parameters are the last
/// good ones.
pub fn train(framework: Framework, train_set: &Dataset, test_set: &Dataset, config: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InsufficientData("train and test splits must be non-empty".into()));
    }
    if config.architecture.pixels() != Dataset::PIXELS {
        return Err(Error::Incompatible(format!("architecture side {} does not match the dataset", config.architecture.side)));
    }
    if let Some(root) = run_dir {
        std::fs::create_dir_all(root).at(root)?;
    }
    let started = Instant::now();
    let dir = RunDir { root: run_dir };
    let data = DataIdentity::of(train_set, test_set);
    let mut params = ModelParams::<f32>::new(framework, config.architecture.clone(), config.seed)?;
    let mut record = RunRecord {
        run_id: run_id(framework, config, &data),
        version: env!("CARGO_PKG_VERSION").into(),
        framework,
        config: config.clone(),
        data,
        parameter_count: params.parameter_count(),
        history: Vec::new(),
        checkpoints: Vec::new(),
        best_epoch: None,
        best_test_accuracy: None,
        clip_events: 0,
        epoch_seconds: Vec::new(),
        total_seconds: 0.0,
        status: RunStatus::Completed,
    };
    dir.checkpoint(&mut record, &params, "initial", 0)?;
    dir.persist(&record)?;

    let opts = config.loss_options();
    let latent = params.arch.latent;
    let k = if framework.has_conditional_prior() { config.k_train } else { 0 };
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut grad = params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let tick = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream(config.seed, Domain::Shuffle, epoch as u64, 0));
        let mut sum = LossBreakdown::default();
        let (mut clipped, mut max_norm) = (0usize, 0.0f64);
        let mut failure = None;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = gather(train_set, chunk);
            let noise = Noise::draw(chunk.len(), k, latent, &mut stream(config.seed, Domain::Batch, epoch as u64, b as u64));
            for t in grad.tensors_mut() {
                t.fill_zero();
            }
            let part = match batch_loss(&params, &x, &y, &noise, &opts, Some(&mut grad)) {
                Ok(p) => p,
                Err(Error::Numerical { term }) => {
                    failure = Some((b, term));
                    break;
                }
                Err(e) => return Err(e),
            };
            let norm = global_norm(&grad);
            if !norm.is_finite() {
                failure = Some((b, "gradient".to_string()));
                break;
            }
            max_norm = max_norm.max(norm);
            if clip_global_norm(&mut grad, config.clip_norm) {
                clipped += 1;
            }
            adam.step(&mut params, &grad);
            accumulate(&mut sum, &part, chunk.len() as f64);
        }
        if let Some((batch, term)) = failure {
            return abort(&dir, record, params, epoch, batch, term, started);
        }
        let test = match dataset_loss(&params, test_set, &opts, config.seed, epoch) {
            Ok(t) => t,
            Err(Error::Numerical { term }) => return abort(&dir, record, params, epoch, usize::MAX, term, started),
            Err(e) => return Err(e),
        };
        let acc = accuracy(&params, test_set, config.k_eval, config.seed)?;
        record.clip_events += clipped;
        record.history.push(EpochRecord {
            epoch,
            train: scaled(sum, 1.0 / train_set.len() as f64),
            test,
            test_accuracy: acc.mean,
            test_per_label_accuracy: acc.per_label,
            clipped_steps: clipped,
            max_grad_norm: max_norm,
        });
        if record.best_test_accuracy.is_none_or(|b| acc.mean > b) {
            record.best_test_accuracy = Some(acc.mean);
            record.best_epoch = Some(epoch);
            dir.checkpoint(&mut record, &params, "best", epoch)?;
        }
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            dir.checkpoint(&mut record, &params, &format!("epoch-{epoch:04}"), epoch)?;
        }
        record.epoch_seconds.push(tick.elapsed().as_secs_f64());
        record.total_seconds = started.elapsed().as_secs_f64();
        dir.persist(&record)?;
    }
    if config.epochs > 0 {
        dir.checkpoint(&mut record, &params, "final", config.epochs)?;
    }
    record.total_seconds = started.elapsed().as_secs_f64();
    dir.persist(&record)?;
    Ok(TrainOutcome { params, record })
}

fn abort(dir: &RunDir, mut record: RunRecord, params: ModelParams<f32>, epoch: usize, batch: usize, term: String, started: Instant) -> Result<TrainOutcome> {
    dir.checkpoint(&mut record, &params, "last_good", epoch - 1)?;
    record.status = RunStatus::NumericalFailure { epoch, batch, term };
    record.total_seconds = started.elapsed().as_secs_f64();
    dir.persist(&record)?;
    Ok(TrainOutcome { params, record })
}

/// Load a run's checkpoint, verifying it matches the recorded framework and
/// architecture.
pub fn load_run_checkpoint(run_dir: &Path, record: &RunRecord, label: &str) -> Result<ModelParams<f32>> {
    let entry = record
        .checkpoint(label)
        .ok_or_else(|| Error::Config(format!("run {} has no `{label}` checkpoint", record.run_id)))?;
    load_checkpoint_as(&run_dir.join(&entry.path), record.framework, &record.config.architecture)
}

/// Accuracy, SAP and MIG of a run's checkpoint on `test_set`, with the run's
/// `k_eval` and seed.
pub fn evaluate(run_dir: &Path, record: &RunRecord, label: &str, test_set: &Dataset) -> Result<MetricsReport> {
    let params = load_run_checkpoint(run_dir, record, label)?;
    evaluate_metrics(&params, test_set, record.config.k_eval, record.config.seed)
}
