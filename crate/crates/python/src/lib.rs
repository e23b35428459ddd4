//! Python bindings: filters, network parameters, synthetic panels, training
//! and interpretation.

use std::path::PathBuf;

use intnn::config::KeyValueDoc;
use intnn::data::{self, insurance_names, PanelDataset};
use intnn::experiment::{self, prepare_split, run_comparison, RunConfig};
use intnn::filters::{self, SmoothingParam, TimeSeriesWindow};
use intnn::network::{NetworkParams, WindowSample};
use intnn::training::{self, ModelKind, TrainedModel};
use intnn::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn window(x: Vec<f64>) -> PyResult<TimeSeriesWindow> {
    TimeSeriesWindow::new(x).map_err(to_py)
}

fn smoothing(k: f64) -> PyResult<SmoothingParam> {
    SmoothingParam::new(k).map_err(to_py)
}

fn run_config(text: Option<&str>) -> PyResult<RunConfig> {
    match text {
        Some(t) => KeyValueDoc::parse(t).and_then(|d| RunConfig::from_doc(&d)).map_err(to_py),
        None => Ok(RunConfig::default()),
    }
}

/// Length of the terminal run of ones in a binary series.
#[pyfunction]
fn naive_persistent_change(x: Vec<f64>) -> PyResult<usize> {
    filters::naive_persistent_change(&window(x)?).map_err(to_py)
}

#[pyfunction]
fn continuous_persistent_change(x: Vec<f64>) -> PyResult<f64> {
    Ok(filters::continuous_persistent_change(&window(x)?))
}

#[pyfunction]
fn symmetric_persistent_change(x: Vec<f64>) -> PyResult<f64> {
    Ok(filters::symmetric_persistent_change(&window(x)?))
}

#[pyfunction]
fn smooth_persistent_change(x: Vec<f64>, k: f64) -> PyResult<f64> {
    Ok(filters::smooth_persistent_change(&window(x)?, smoothing(k)?))
}

/// Filter value after every prefix of the series.
#[pyfunction]
fn filter_series(x: Vec<f64>, k: f64) -> PyResult<Vec<f64>> {
    filters::filter_series(&x, smoothing(k)?).map_err(to_py)
}

/// `(d/dx, d/dk)` of `upstream * D(x, k)`.
#[pyfunction]
#[pyo3(signature = (x, k, upstream = 1.0))]
fn smooth_filter_gradient(x: Vec<f64>, k: f64, upstream: f64) -> PyResult<(Vec<f64>, f64)> {
    let g = filters::smooth_filter_gradient(&window(x)?, smoothing(k)?, upstream);
    Ok((g.grad_x, g.grad_k))
}

/// Network parameters: splitting layer, reduction channels, filters, head.
#[pyclass(name = "NetworkParams", from_py_object)]
#[derive(Clone)]
struct PyNetwork(NetworkParams);

#[pymethods]
impl PyNetwork {
    /// Seeded random initialization.
    #[staticmethod]
    #[pyo3(signature = (m, s, channels = 1, seed = 0))]
    fn init(m: usize, s: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PyNetwork(NetworkParams::init(m, s, channels, &mut rng))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        NetworkParams::from_text(text).map(PyNetwork).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Teacher used by the repository's parameter-recovery runs.
    #[staticmethod]
    fn acceptance_teacher() -> Self {
        PyNetwork(experiment::acceptance_teacher())
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    /// Probability of label 1 for an `m x s` payment matrix (rows are insurances).
    fn forward(&self, payments: Vec<Vec<f64>>) -> PyResult<f64> {
        let sample = WindowSample::new(payments, 0).map_err(to_py)?;
        self.0.forward(&sample).map_err(to_py)
    }

    #[pyo3(signature = (names = None))]
    fn interpret(&self, names: Option<Vec<String>>) -> PyResult<String> {
        let names = names.unwrap_or_else(|| insurance_names(self.0.m));
        self.0.interpret(&names).map(|r| r.to_string()).map_err(to_py)
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }

    #[getter]
    fn s(&self) -> usize {
        self.0.s
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c
    }

    #[getter]
    fn d(&self) -> f64 {
        self.0.d
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.0.u.clone()
    }

    #[getter]
    fn v(&self) -> f64 {
        self.0.v
    }

    /// Smoothing `k` of every channel.
    #[getter]
    fn smoothing(&self) -> Vec<f64> {
        self.0.smoothing()
    }

    fn weights(&self, channel: usize) -> PyResult<Vec<f64>> {
        self.0
            .channels
            .get(channel)
            .map(|c| c.w.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no channel {channel}")))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("NetworkParams(m={}, s={}, channels={})", self.0.m, self.0.s, self.0.channels.len())
    }
}

/// Long-format payment panel.
#[pyclass(name = "PanelDataset")]
struct PyDataset(PanelDataset);

#[pymethods]
impl PyDataset {
    /// Simulates a panel. `config` holds `key = value` lines; labels come from
    /// `teacher` when given.
    #[staticmethod]
    #[pyo3(signature = (config = None, teacher = None))]
    fn generate(config: Option<&str>, teacher: Option<PyRef<'_, PyNetwork>>) -> PyResult<Self> {
        let gen = run_config(config)?.generator;
        let ds = match teacher {
            Some(t) => data::generate_teacher_labeled(&gen, &t.0),
            None => data::generate_synthetic(&gen),
        };
        ds.map(PyDataset).map_err(to_py)
    }

    /// The panel used by the acceptance runs.
    #[staticmethod]
    fn acceptance() -> PyResult<Self> {
        data::generate_teacher_labeled(&experiment::acceptance_generator(), &experiment::acceptance_teacher())
            .map(PyDataset)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        data::load_csv(path).map(PyDataset).map_err(to_py)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        data::save_csv(&self.0, path).map_err(to_py)
    }

    /// Same panel with a share `rate` of positive payments zeroed.
    #[pyo3(signature = (rate, seed = 1))]
    fn corrupt(&self, rate: f64, seed: u64) -> PyResult<Self> {
        data::corrupt_missing(&self.0, rate, seed).map(PyDataset).map_err(to_py)
    }

    /// Labeled `s`-period windows as `(payments, label)` with payments `m x s`.
    fn windows(&self, s: usize) -> PyResult<Vec<(Vec<Vec<f64>>, u8)>> {
        let w = data::windowize(&self.0, s).map_err(to_py)?;
        Ok(w
            .iter()
            .map(|x| ((0..x.m()).map(|j| x.series(j).to_vec()).collect(), x.label))
            .collect())
    }

    #[getter]
    fn insurance_names(&self) -> Vec<String> {
        self.0.insurance_names.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Trains the network on a balanced split; returns `(params, test_accuracy)`.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, channels = None))]
fn train_network(
    py: Python<'_>,
    dataset: PyRef<'_, PyDataset>,
    config: Option<&str>,
    channels: Option<usize>,
) -> PyResult<(PyNetwork, f64)> {
    let run = run_config(config)?;
    let channels = channels.unwrap_or(run.experiment.channels);
    let ds = &dataset.0;
    py.detach(|| {
        let split = prepare_split(ds, &run.experiment)?;
        let (model, _) = training::train(ModelKind::Network { channels }, &split, &run.train)?;
        let acc = model.evaluate(&split.test)?.accuracy;
        match model {
            TrainedModel::Network(p) => Ok((PyNetwork(p), acc)),
            TrainedModel::Baseline(_) => unreachable!("network kind yields a network"),
        }
    })
    .map_err(to_py)
}

/// Trains the network and every baseline; returns the comparison table text.
#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn compare(py: Python<'_>, dataset: PyRef<'_, PyDataset>, config: Option<&str>) -> PyResult<String> {
    let run = run_config(config)?;
    let ds = &dataset.0;
    py.detach(|| {
        let split = prepare_split(ds, &run.experiment)?;
        run_comparison(&split, &run.train, &run.experiment)?.table()
    })
    .map_err(to_py)
}

#[pymodule]
fn intnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(naive_persistent_change, m)?)?;
    m.add_function(wrap_pyfunction!(continuous_persistent_change, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_persistent_change, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_persistent_change, m)?)?;
    m.add_function(wrap_pyfunction!(filter_series, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_filter_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(train_network, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    Ok(())
}
