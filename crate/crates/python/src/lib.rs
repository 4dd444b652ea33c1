//! Python bindings. Structured results come back as plain dicts and lists
//! (serialized through JSON), matrices as flat row-major lists.

use std::path::{Path, PathBuf};

use factorlens::analysis::{intervention_analysis, InterventionSpec};
use factorlens::labels::label_index;
use factorlens::objectives::gaussian_kl;
use factorlens::synthdata::{generate_dataset, load_dataset, save_dataset, CohortConfig, Dataset};
use factorlens::training::{evaluate as evaluate_run, load_run_checkpoint, train as train_run, RunRecord, TrainConfig};
use factorlens::{Error, Framework, GaussianParams};
use pyo3::exceptions::{PyNotImplementedError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

pyo3::create_exception!(factorlens, NumericalError, PyRuntimeError);
pyo3::create_exception!(factorlens, IncompatibleError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) => PyValueError::new_err(msg),
        Error::Numerical { .. } => NumericalError::new_err(msg),
        Error::Incompatible(_) | Error::Checksum { .. } | Error::ShapeMismatch { .. } | Error::MalformedManifest { .. } => {
            IncompatibleError::new_err(msg)
        }
        Error::Unsupported { .. } => PyNotImplementedError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Parse an optional JSON object of overrides into a config with defaults.
fn from_json<T: DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("configuration error: {e}"))),
    }
}

fn load_splits(data: &Path) -> PyResult<(Dataset, Dataset)> {
    Ok((load_dataset(&data.join("train")).map_err(to_py)?, load_dataset(&data.join("test")).map_err(to_py)?))
}

fn framework(name: &str) -> PyResult<Framework> {
    name.parse().map_err(to_py)
}

/// Generate a synthetic cohort into `out/train` and `out/test`. Returns the
/// two manifests.
#[pyfunction]
#[pyo3(signature = (out, n_train, n_test, config_json=None))]
fn generate(py: Python<'_>, out: PathBuf, n_train: usize, n_test: usize, config_json: Option<&str>) -> PyResult<PyObject> {
    let config: CohortConfig = from_json(config_json)?;
    let (train, test, effects) = py.allow_threads(|| generate_dataset(&config, n_train, n_test)).map_err(to_py)?;
    save_dataset(&train, &effects, &out.join("train")).map_err(to_py)?;
    save_dataset(&test, &effects, &out.join("test")).map_err(to_py)?;
    let (train, test) = load_splits(&out)?;
    to_object(py, &(&train.manifest, &test.manifest))
}

/// One padded observation (row-major, 64 x 64) and its label bits.
#[pyfunction]
fn observation(split_dir: PathBuf, index: usize) -> PyResult<(Vec<f32>, [u8; 3])> {
    let d = load_dataset(&split_dir).map_err(to_py)?;
    if index >= d.len() {
        return Err(PyValueError::new_err(format!("index {index} out of range for {} observations", d.len())));
    }
    Ok((d.observation(index).to_vec(), d.labels[index].bits()))
}

/// Train `framework` on the dataset at `data`, writing the run to `run`.
/// Returns the run record.
#[pyfunction]
#[pyo3(signature = (framework_name, data, run, config_json=None))]
fn train(py: Python<'_>, framework_name: &str, data: PathBuf, run: PathBuf, config_json: Option<&str>) -> PyResult<PyObject> {
    let fw = framework(framework_name)?;
    let config: TrainConfig = from_json(config_json)?;
    let (train_set, test_set) = load_splits(&data)?;
    let out = py.allow_threads(|| train_run(fw, &train_set, &test_set, &config, Some(&run))).map_err(to_py)?;
    to_object(py, &out.record)
}

/// Accuracy, SAP and MIG of a run's checkpoint on the test split.
#[pyfunction]
#[pyo3(signature = (run, data, checkpoint="final"))]
fn evaluate(py: Python<'_>, run: PathBuf, data: PathBuf, checkpoint: &str) -> PyResult<PyObject> {
    let record = RunRecord::load(&run).map_err(to_py)?;
    let test = load_dataset(&data.join("test")).map_err(to_py)?;
    let report = py.allow_threads(|| evaluate_run(&run, &record, checkpoint, &test)).map_err(to_py)?;
    to_object(py, &report)
}

/// Effect map of flipping `target` with the other labels held at `fixed`
/// (label name -> value).
#[pyfunction]
#[pyo3(signature = (run, target, fixed, n_pairs=1000, seed=0, checkpoint="final"))]
fn intervene(
    py: Python<'_>,
    run: PathBuf,
    target: &str,
    fixed: Vec<(String, bool)>,
    n_pairs: usize,
    seed: u64,
    checkpoint: &str,
) -> PyResult<PyObject> {
    let index = |name: &str| label_index(name).ok_or_else(|| PyValueError::new_err(format!("unknown label `{name}`")));
    let fixed = fixed.iter().map(|(k, v)| Ok((index(k)?, *v))).collect::<PyResult<Vec<_>>>()?;
    let spec = InterventionSpec::new(index(target)?, &fixed, n_pairs, seed).map_err(to_py)?;
    let record = RunRecord::load(&run).map_err(to_py)?;
    let params = load_run_checkpoint(&run, &record, checkpoint).map_err(to_py)?;
    let map = py.allow_threads(|| intervention_analysis(&params, &spec)).map_err(to_py)?;
    to_object(py, &map)
}

/// KL divergence between diagonal Gaussians.
#[pyfunction]
fn kl_divergence(mean_q: Vec<f64>, std_q: Vec<f64>, mean_p: Vec<f64>, std_p: Vec<f64>) -> PyResult<f64> {
    let dim = mean_q.len();
    if [std_q.len(), mean_p.len(), std_p.len()].iter().any(|l| *l != dim) {
        return Err(PyValueError::new_err("all four vectors must have the same length"));
    }
    gaussian_kl(&GaussianParams::new(dim, mean_q, std_q), &GaussianParams::new(dim, mean_p, std_p)).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "factorlens")]
pub fn factorlens_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("IncompatibleError", m.py().get_type::<IncompatibleError>())?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(observation, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(intervene, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    Ok(())
}
