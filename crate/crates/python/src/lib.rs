//! Python bindings: schedule, synthetic data, metrics, training and
//! generator sampling. Point sets cross the boundary as lists of rows.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use condgan::data::{make_dataset as build_dataset, DatasetSpec, Layout};
use condgan::harness::{load_checkpoint, train as run_training, Trainer, TrainingConfig};
use condgan::metrics::{self, FeatureSet};
use condgan::nets::{generator_forward, GeneratorParams};
use condgan::schedule::TransitionSchedule;
use condgan::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn feature_set(rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> PyResult<FeatureSet> {
    FeatureSet::from_rows(&rows, labels).map_err(to_py)
}

/// λ schedule with start, end, horizon and cap.
#[pyclass(name = "TransitionSchedule", frozen)]
struct PySchedule(TransitionSchedule);

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (t_start, t_end, t_max, clip_max = 1.0))]
    fn new(t_start: i64, t_end: i64, t_max: i64, clip_max: f64) -> PyResult<Self> {
        TransitionSchedule::new(t_start, t_end, t_max, clip_max)
            .map(Self)
            .map_err(to_py)
    }

    fn lambda_at(&self, t: i64) -> f64 {
        self.0.lambda_at(t)
    }

    #[pyo3(signature = (stride = 1))]
    fn curve(&self, stride: i64) -> PyResult<Vec<(i64, f64)>> {
        self.0.curve(stride).map_err(to_py)
    }
}

/// Returns `(points, labels, mode_centers)` of a synthetic mixture dataset.
#[pyfunction]
#[pyo3(signature = (num_classes, samples_per_class, modes_per_class, mode_sigma = 0.05, layout = "ring", seed = 0))]
#[allow(clippy::type_complexity)]
fn make_dataset(
    num_classes: usize,
    samples_per_class: usize,
    modes_per_class: usize,
    mode_sigma: f64,
    layout: &str,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<Vec<Vec<f64>>>)> {
    let layout: Layout = layout.parse().map_err(to_py)?;
    let ds = build_dataset(&DatasetSpec {
        num_classes,
        samples_per_class,
        modes_per_class,
        mode_sigma,
        layout,
        seed,
        dim: 2,
    })
    .map_err(to_py)?;
    let points = (0..ds.len()).map(|i| ds.point(i).to_vec()).collect();
    Ok((points, ds.labels().to_vec(), ds.mode_centers().to_vec()))
}

#[pyfunction]
fn fid(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::fid(&feature_set(real, None)?, &feature_set(fake, None)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (real, fake, block_size = None))]
fn kid(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>, block_size: Option<usize>) -> PyResult<f64> {
    let (r, f) = (feature_set(real, None)?, feature_set(fake, None)?);
    let block = block_size.unwrap_or_else(|| metrics::default_block_size(&r, &f));
    metrics::kid(&r, &f, block).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (real, fake, k = 3))]
fn precision_recall(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>, k: usize) -> PyResult<(f64, f64)> {
    metrics::precision_recall(&feature_set(real, None)?, &feature_set(fake, None)?, k).map_err(to_py)
}

/// Trains from a JSON config string and returns the metrics CSV text.
#[pyfunction]
fn train(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = TrainingConfig::from_json(config_json).map_err(to_py)?;
    let outcome = py.detach(|| run_training(&cfg)).map_err(to_py)?;
    Ok(outcome.log.to_csv_string())
}

/// Generator restored from a training checkpoint.
#[pyclass(name = "Generator", frozen)]
struct PyGenerator(GeneratorParams);

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn from_checkpoint(path: &str) -> PyResult<Self> {
        let record = load_checkpoint(path.as_ref()).map_err(to_py)?;
        let trainer = Trainer::from_checkpoint(&record).map_err(to_py)?;
        Ok(Self(trainer.generator().clone()))
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    /// One sample per (latent, class) pair at conditioning weight `lam`.
    fn sample(&self, z: Vec<Vec<f64>>, labels: Vec<usize>, lam: f64) -> PyResult<Vec<Vec<f64>>> {
        if z.len() != labels.len() {
            return Err(PyValueError::new_err("z and labels must have the same length"));
        }
        z.iter()
            .zip(&labels)
            .map(|(zi, &c)| generator_forward(&self.0, zi, c, lam).map_err(to_py))
            .collect()
    }
}

#[pymodule]
fn pycondgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fid, m)?)?;
    m.add_function(wrap_pyfunction!(kid, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
