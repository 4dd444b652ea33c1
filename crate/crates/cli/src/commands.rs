use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use factorlens::analysis::{
    cloud_separation, confusion_matrix, default_cloud_dims, evaluate_metrics, intervention_analysis, posterior_cloud,
    write_cloud_csv, CloudSeparation, ConfusionMatrix, LogisticProbe, MetricsReport,
};
use factorlens::labels::LABEL_NAMES;
use factorlens::synthdata::{generate_dataset, load_dataset, read_manifest, save_dataset, Dataset};
use factorlens::training::{self, load_run_checkpoint, DataIdentity, RunRecord, RunStatus};
use factorlens::{Error, Framework};
use serde::{Deserialize, Serialize};

use crate::config::{env_seed, parse_fixed, DataSection, ExperimentConfig, InterventionConfig};
use crate::plot::write_heatmap;
use crate::{CliError, ConfigArgs, EvalArgs, GenArgs, IntervArgs, ReportArgs, TrainArgs, VERSION};

/// Status output to stdout; a closed pipe (`factorlens config | head`) is not
/// an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const DATA_CONFIG_FILE: &str = "config.json";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const LOCK_FILE: &str = ".lock";
pub const EVAL_DIR: &str = "eval";
pub const METRICS_FILE: &str = "metrics.json";

type CliResult = Result<(), CliError>;

/// Held for the duration of a command that writes into a directory.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(Error::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    fs::write(path, bytes).map_err(|e| io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn load_splits(data: &Path) -> Result<(Dataset, Dataset), CliError> {
    Ok((load_dataset(&data.join("train"))?, load_dataset(&data.join("test"))?))
}

pub fn gen(a: &GenArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(a.config.as_deref(), env_seed()?)?;
    if let Some(s) = a.seed {
        cfg.override_seed(s);
    }
    if let Some(n) = a.n_train {
        cfg.data.n_train = n;
    }
    if let Some(n) = a.n_test {
        cfg.data.n_test = n;
    }
    cfg.validate()?;
    let _lock = DirLock::acquire(&a.out)?;
    let d = &cfg.data;
    let (train, test, effects) = generate_dataset(&d.cohort, d.n_train, d.n_test)?;
    save_dataset(&train, &effects, &a.out.join("train"))?;
    save_dataset(&test, &effects, &a.out.join("test"))?;
    write_json(&a.out.join(DATA_CONFIG_FILE), &Versioned { version: VERSION.to_string(), config: &cfg })?;
    for (split, name) in [(&train, "train"), (&test, "test")] {
        let m = read_manifest(&a.out.join(name))?;
        let marg = split.label_marginals();
        say!(
            "{:?}: {} samples, seed {}, config {}, x.f32 sha256 {}, marginals L {:.3} S {:.3} H {:.3}",
            m.split,
            m.count,
            m.seed,
            &m.config_hash[..12],
            m.checksums.get("x.f32").map(String::as_str).unwrap_or("-"),
            marg[0],
            marg[1],
            marg[2]
        );
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: String,
    config: T,
}

pub fn train(a: &TrainArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(a.config.as_deref(), env_seed()?)?;
    if let Some(f) = a.framework {
        cfg.model.framework = f;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch {
        t.batch_size = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
        cfg.analysis.seed = v;
    }
    if let Some(v) = a.beta {
        t.beta = v;
    }
    if let Some(v) = a.k_train {
        t.k_train = v;
    }
    if let Some(v) = a.k_eval {
        t.k_eval = v;
    }
    cfg.validate()?;
    let (train, test) = load_splits(&a.data)?;
    cfg.data = DataSection { cohort: train.manifest.config.clone(), n_train: train.len(), n_test: test.len() };

    let _lock = DirLock::acquire(&a.out)?;
    write_json(&a.out.join(EXPERIMENT_FILE), &Versioned { version: VERSION.to_string(), config: &cfg })?;
    let outcome = training::train(cfg.model.framework, &train, &test, &cfg.train, Some(&a.out))?;
    let r = &outcome.record;
    if let Some(last) = r.history.last() {
        say!(
            "{} run {}: {} epochs, final train loss {:.3}, test accuracy {:.3} (best {:.3} at epoch {})",
            r.framework,
            r.run_id,
            r.history.len(),
            last.train.total,
            last.test_accuracy,
            r.best_test_accuracy.unwrap_or(f64::NAN),
            r.best_epoch.unwrap_or(0)
        );
    } else {
        say!("{} run {}: no epochs, initial checkpoint written", r.framework, r.run_id);
    }
    if r.clip_events > 0 {
        say!("gradient clipping triggered on {} steps", r.clip_events);
    }
    match &r.status {
        RunStatus::Completed => Ok(()),
        RunStatus::NumericalFailure { epoch, batch, term } => Err(CliError::Lib(Error::Numerical {
            term: format!("{term} (epoch {epoch}, batch {batch}; last good checkpoint kept)"),
        })),
    }
}

fn load_run(run: &Path) -> Result<(RunRecord, ExperimentConfig), CliError> {
    let record = RunRecord::load(run)?;
    let v: Versioned<ExperimentConfig> = read_json(&run.join(EXPERIMENT_FILE))?;
    Ok((record, v.config))
}

#[derive(Serialize, Deserialize)]
pub struct EvalOutput {
    pub version: String,
    pub run_id: String,
    pub framework: Framework,
    pub checkpoint: String,
    pub data: DataIdentity,
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
}

#[derive(Serialize)]
struct ConfusionOutput<'a> {
    version: &'a str,
    run_id: &'a str,
    rows: [&'a str; 3],
    matrix: &'a ConfusionMatrix,
    row_argmax: Vec<usize>,
    probe: &'a LogisticProbe,
}

#[derive(Serialize)]
struct CloudOutput<'a> {
    version: &'a str,
    run_id: &'a str,
    dims: [usize; 2],
    separation: Option<&'a CloudSeparation>,
    separated: Option<bool>,
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let (record, cfg) = load_run(&a.run)?;
    if let RunStatus::NumericalFailure { term, .. } = &record.status {
        return Err(CliError::Lib(Error::Numerical { term: format!("run {} did not complete ({term})", record.run_id) }));
    }
    let label = a.checkpoint.clone().unwrap_or_else(|| cfg.analysis.checkpoint.clone());
    let seed = a.seed.unwrap_or(cfg.analysis.seed);
    let params = load_run_checkpoint(&a.run, &record, &label)?;
    let (train, test) = load_splits(&a.data)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join(EVAL_DIR));
    let _lock = DirLock::acquire(&out)?;

    let metrics = evaluate_metrics(&params, &test, record.config.k_eval, seed)?;
    let probe = LogisticProbe::fit_on(&params, &train)?;
    let confusion = confusion_matrix(&params, &probe, &test, seed)?;
    let dims = cfg.analysis.cloud_dims.map(|d| (d[0], d[1])).unwrap_or_else(|| default_cloud_dims(record.framework));
    let cloud = posterior_cloud(&params, &test, dims, seed)?;
    let separation = cloud_separation(&cloud).ok();

    write_json(
        &out.join(METRICS_FILE),
        &EvalOutput {
            version: VERSION.into(),
            run_id: record.run_id.clone(),
            framework: record.framework,
            checkpoint: label.clone(),
            data: DataIdentity::of(&train, &test),
            config: cfg.clone(),
            metrics: metrics.clone(),
        },
    )?;
    write_json(
        &out.join("confusion.json"),
        &ConfusionOutput {
            version: VERSION,
            run_id: &record.run_id,
            rows: LABEL_NAMES,
            matrix: &confusion,
            row_argmax: confusion.row_argmax(),
            probe: &probe,
        },
    )?;
    write_cloud_csv(&cloud, &out.join("cloud.csv"))?;
    write_json(
        &out.join("cloud.json"),
        &CloudOutput {
            version: VERSION,
            run_id: &record.run_id,
            dims: [dims.0, dims.1],
            separation: separation.as_ref(),
            separated: separation.as_ref().map(CloudSeparation::separated),
        },
    )?;
    say!(
        "{} run {} [{label}]: accuracy {:.3} (L {:.3} S {:.3} H {:.3}), SAP {:.3}, MIG {:.3}",
        record.framework,
        record.run_id,
        metrics.accuracy,
        metrics.per_label_accuracy[0],
        metrics.per_label_accuracy[1],
        metrics.per_label_accuracy[2],
        metrics.sap,
        metrics.mig
    );
    say!("confusion row argmax {:?}; reports in {}", confusion.row_argmax(), out.display());
    Ok(())
}

fn scenario_name(iv: &InterventionConfig) -> String {
    let fixed: Vec<String> = iv.fixed.iter().map(|(k, v)| format!("{k}={}", *v as u8)).collect();
    format!("{}_{}", iv.target, fixed.join("_"))
}

pub fn intervene(a: &IntervArgs) -> CliResult {
    let (record, cfg) = load_run(&a.run)?;
    let seed = a.seed.unwrap_or(cfg.analysis.seed);
    let mut scenarios = match &a.label {
        Some(label) => vec![InterventionConfig {
            target: label.clone(),
            fixed: parse_fixed(a.fixed.as_deref().unwrap_or(""))?,
            n_pairs: factorlens::analysis::DEFAULT_PAIRS,
        }],
        None if a.fixed.is_some() => return Err(Error::Config("--fixed needs --label".into()).into()),
        None => cfg.analysis.interventions.clone(),
    };
    if let Some(n) = a.n {
        scenarios.iter_mut().for_each(|s| s.n_pairs = n);
    }
    let specs = scenarios.iter().map(|s| s.to_spec(seed)).collect::<Result<Vec<_>, _>>()?;
    if !record.framework.has_conditional_prior() {
        return Err(Error::Unsupported {
            framework: record.framework.to_string(),
            reason: "no conditional prior to sample from".into(),
        }
        .into());
    }
    let label = a.checkpoint.clone().unwrap_or_else(|| cfg.analysis.checkpoint.clone());
    let params = load_run_checkpoint(&a.run, &record, &label)?;
    let root = a.out.clone().unwrap_or_else(|| a.run.join("interventions"));
    let _lock = DirLock::acquire(&root)?;
    let plot = a.plot || cfg.analysis.plot;
    for (iv, spec) in scenarios.iter().zip(&specs) {
        let map = intervention_analysis(&params, spec)?;
        let dir = if a.out.is_some() && specs.len() == 1 { root.clone() } else { root.join(scenario_name(iv)) };
        map.write(&dir)?;
        if plot {
            let png = dir.join("heatmap.png");
            write_heatmap(&map.diff, map.side, &png).map_err(|e| io(&png, std::io::Error::other(e.to_string())))?;
        }
        say!(
            "{}: {} pairs, max |diff| {:.4}, norm {:.4} -> {}",
            scenario_name(iv),
            map.n_pairs,
            map.max_abs(),
            map.norm(),
            dir.display()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub framework: Framework,
    pub runs: usize,
    pub accuracy: (f64, Option<f64>),
    pub sap: (f64, Option<f64>),
    pub mig: (f64, Option<f64>),
}

fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

pub fn build_report(outputs: &[EvalOutput]) -> Result<Vec<ReportRow>, CliError> {
    let first = outputs.first().ok_or_else(|| Error::Config("report needs at least one run".into()))?;
    if let Some(other) = outputs.iter().find(|o| o.data != first.data) {
        return Err(Error::Incompatible(format!(
            "mixed datasets: run {} used {:?}, run {} used {:?}",
            first.run_id, first.data, other.run_id, other.data
        ))
        .into());
    }
    let mut rows = Vec::new();
    for fw in Framework::ALL {
        let group: Vec<&EvalOutput> = outputs.iter().filter(|o| o.framework == fw).collect();
        if group.is_empty() {
            continue;
        }
        let col = |f: fn(&MetricsReport) -> f64| mean_std(&group.iter().map(|o| f(&o.metrics)).collect::<Vec<_>>());
        rows.push(ReportRow {
            framework: fw,
            runs: group.len(),
            accuracy: col(|m| m.accuracy),
            sap: col(|m| m.sap),
            mig: col(|m| m.mig),
        });
    }
    Ok(rows)
}

fn cell((m, s): (f64, Option<f64>)) -> String {
    match s {
        Some(s) => format!("{m:.3} ± {s:.3}"),
        None => format!("{m:.3}"),
    }
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = format!("{:<8} {:>4}  {:<15} {:<15} {:<15}\n", "model", "runs", "accuracy", "SAP", "MIG");
    for r in rows {
        out += &format!(
            "{:<8} {:>4}  {:<15} {:<15} {:<15}\n",
            r.framework.as_str(),
            r.runs,
            cell(r.accuracy),
            cell(r.sap),
            cell(r.mig)
        );
    }
    out
}

pub fn report(a: &ReportArgs) -> CliResult {
    let mut outputs = Vec::new();
    for run in &a.runs {
        let path = run.join(EVAL_DIR).join(METRICS_FILE);
        if !path.exists() {
            return Err(Error::Config(format!("{} has not been evaluated; run `factorlens eval` first", run.display())).into());
        }
        outputs.push(read_json::<EvalOutput>(&path)?);
    }
    let rows = build_report(&outputs)?;
    print!("{}", render_report(&rows));
    if let Some(path) = &a.out {
        let opt = |v: Option<f64>| v.map(|s| s.to_string()).unwrap_or_default();
        let mut csv = String::from("framework,runs,accuracy_mean,accuracy_std,sap_mean,sap_std,mig_mean,mig_std\n");
        for r in &rows {
            csv += &format!(
                "{},{},{},{},{},{},{},{}\n",
                r.framework.as_str(),
                r.runs,
                r.accuracy.0,
                opt(r.accuracy.1),
                r.sap.0,
                opt(r.sap.1),
                r.mig.0,
                opt(r.mig.1)
            );
        }
        fs::write(path, csv).map_err(|e| io(path, e))?;
        #[derive(Serialize)]
        struct ReportFile<'a> {
            version: &'a str,
            data: &'a DataIdentity,
            runs: Vec<&'a str>,
            rows: &'a [ReportRow],
        }
        write_json(
            &path.with_extension("json"),
            &ReportFile {
                version: VERSION,
                data: &outputs[0].data,
                runs: outputs.iter().map(|o| o.run_id.as_str()).collect(),
                rows: &rows,
            },
        )?;
    }
    Ok(())
}

pub fn print_config(a: &ConfigArgs) -> CliResult {
    let cfg = ExperimentConfig::load(a.config.as_deref(), env_seed()?)?;
    say!("{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?);
    Ok(())
}
