//! Python bindings: topologies, routing, min-MLU, dataset generation and
//! training runs.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pewflow::harness::{self, Preset, RunResult, TrainConfig};
use pewflow::models::{Architecture, ModelConfig, Representation};
use pewflow::routing::{DemandMatrix, Scheme};
use pewflow::topology::{self, TopologyFormat};
use pewflow::traffic::{self, DatasetBundle, DatasetSpec, Split, TrafficConfig};

fn py_err(e: pewflow::Error) -> PyErr {
    match e {
        pewflow::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = pewflow::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn demand_matrix(rows: Vec<Vec<f64>>) -> PyResult<DemandMatrix> {
    DemandMatrix::from_rows(rows).map_err(py_err)
}

fn split_of(name: &str) -> PyResult<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown split `{name}`")))
}

#[pyclass(name = "Topology", module = "pewflow", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTopology {
    inner: topology::Topology,
}

#[pymethods]
impl PyTopology {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = topology::parse_topology(text, TopologyFormat::NativeJson, "topology").map_err(py_err)?;
        Ok(PyTopology { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, name = "topology"))]
    fn from_repetita(text: &str, name: &str) -> PyResult<Self> {
        let inner = topology::parse_topology(text, TopologyFormat::Repetita, name).map_err(py_err)?;
        Ok(PyTopology { inner })
    }

    /// Random connected graph with bidirectional links.
    #[staticmethod]
    #[pyo3(signature = (name, n, extra_links, capacities, seed = 0))]
    fn synthetic(name: &str, n: usize, extra_links: usize, capacities: Vec<f64>, seed: u64) -> PyResult<Self> {
        let inner = topology::synthetic_topology(name, n, extra_links, &capacities, seed).map_err(py_err)?;
        Ok(PyTopology { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    /// `(id, src, dst, weight, capacity)` per edge.
    fn edges(&self) -> Vec<(usize, usize, usize, f64, f64)> {
        self.inner.edges().iter().map(|e| (e.id, e.src, e.dst, e.weight, e.capacity)).collect()
    }

    fn diameter(&self) -> usize {
        topology::diameter(&self.inner)
    }

    fn betweenness(&self) -> Vec<f64> {
        topology::weighted_betweenness(&self.inner)
    }

    fn metrics(&self) -> HashMap<&'static str, f64> {
        let m = topology::compute_metrics(&self.inner);
        topology::TopologyMetrics::NAMES.into_iter().zip(m.values()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Topology({:?}, nodes={}, edges={})", self.inner.name(), self.inner.n_nodes(), self.inner.n_edges())
    }
}

/// Routes a demand matrix; returns `(mlu, loads)` with loads indexed by edge id.
#[pyfunction]
#[pyo3(signature = (topology, demands, scheme = "ssp"))]
fn route(topology: &PyTopology, demands: Vec<Vec<f64>>, scheme: &str) -> PyResult<(f64, Vec<f64>)> {
    let out = pewflow::routing::route(&topology.inner, &demand_matrix(demands)?, parse(scheme)?).map_err(py_err)?;
    Ok((out.mlu, out.loads))
}

/// Approximate optimal MLU; returns `(theta, lower_bound)`.
#[pyfunction]
#[pyo3(signature = (topology, demands, epsilon = 0.05))]
fn min_mlu(py: Python<'_>, topology: &PyTopology, demands: Vec<Vec<f64>>, epsilon: f64) -> PyResult<(f64, f64)> {
    let d = demand_matrix(demands)?;
    let r = py.detach(|| pewflow::mcnf::min_mlu(&topology.inner, &d, epsilon)).map_err(py_err)?;
    Ok((r.theta, r.lower_bound))
}

/// Gravity matrix rescaled to optimal MLU 1.
#[pyfunction]
#[pyo3(signature = (topology, seed, epsilon = 0.05))]
fn gravity(py: Python<'_>, topology: &PyTopology, seed: u64, epsilon: f64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = TrafficConfig { epsilon, ..TrafficConfig::default() };
    let d = py.detach(|| traffic::seeded_gravity_dm(&topology.inner, seed, &cfg)).map_err(py_err)?;
    Ok(d.rows())
}

#[pyclass(name = "Dataset", module = "pewflow", frozen)]
struct PyDataset {
    inner: DatasetBundle,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (topology, scheme = "ssp", samples = 1000, seed = 0, variations = None, epsilon = 0.05, screen = true))]
    fn generate(
        py: Python<'_>,
        topology: &PyTopology,
        scheme: &str,
        samples: usize,
        seed: u64,
        variations: Option<usize>,
        epsilon: f64,
        screen: bool,
    ) -> PyResult<Self> {
        let mut spec = DatasetSpec::new(parse(scheme)?, samples, seed);
        spec.variations = variations;
        spec.traffic.epsilon = epsilon;
        spec.screen_triviality = screen;
        let inner = py.detach(|| traffic::build_datasets(&topology.inner, &spec)).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: DatasetBundle::read_dir(&path).map_err(py_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_dir(&path).map_err(py_err)
    }

    #[getter]
    fn topology(&self) -> PyTopology {
        PyTopology { inner: self.inner.topology.clone() }
    }

    #[getter]
    fn flow_entries(&self) -> usize {
        self.inner.flow_entries()
    }

    #[getter]
    fn trivial_warning(&self) -> bool {
        self.inner.manifest.trivial_warning
    }

    fn manifest_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// MLU labels of one split (`train`, `validate` or `test`).
    fn labels(&self, split: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.split(split_of(split)?).labels())
    }

    /// De-standardized demand matrix of one sample.
    fn demands(&self, split: &str, index: usize) -> PyResult<Vec<Vec<f64>>> {
        let data = self.inner.split(split_of(split)?);
        let sample = data
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("{split} has {} samples", data.len())))?;
        Ok(sample.demand_matrix(&self.inner.normalization()).map_err(py_err)?.rows())
    }

    fn __len__(&self) -> usize {
        self.inner.train.len()
    }
}

#[pyclass(name = "RunResult", module = "pewflow", frozen)]
struct PyRunResult {
    inner: RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn test_nmse(&self) -> f64 {
        self.inner.test_nmse
    }

    #[getter]
    fn test_mse(&self) -> f64 {
        self.inner.test_mse
    }

    #[getter]
    fn best_val_mse(&self) -> f64 {
        self.inner.best_val_mse
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.best_epoch
    }

    #[getter]
    fn train_losses(&self) -> Vec<f64> {
        self.inner.train_losses.clone()
    }

    #[getter]
    fn val_losses(&self) -> Vec<f64> {
        self.inner.val_losses.clone()
    }

    #[getter]
    fn failure(&self) -> Option<String> {
        self.inner.failure.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult({}, seed={}, test_nmse={:.4}, best_epoch={})",
            self.inner.config.architecture, self.inner.seed, self.inner.test_nmse, self.inner.best_epoch
        )
    }
}

/// One training run of a single configuration.
#[pyfunction]
#[pyo3(signature = (dataset, arch, hidden, representation = "sum", lr = 5e-3, preset = "desk", epochs = None, patience = None, seed = 0, strict = false))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    arch: &str,
    hidden: usize,
    representation: &str,
    lr: f64,
    preset: &str,
    epochs: Option<usize>,
    patience: Option<usize>,
    seed: u64,
    strict: bool,
) -> PyResult<PyRunResult> {
    let arch: Architecture = parse(arch)?;
    let rep = match representation {
        "raw" => Representation::Raw,
        "sum" => Representation::Sum,
        other => return Err(PyValueError::new_err(format!("unknown representation `{other}`"))),
    };
    let mut tc = TrainConfig::preset(parse::<Preset>(preset)?);
    if let Some(e) = epochs {
        tc.epochs = e;
        tc.patience = tc.patience.min(e);
    }
    if let Some(p) = patience {
        tc.patience = p;
    }
    let bundle = &dataset.inner;
    let mut cfg = ModelConfig::new(arch, hidden, rep, &bundle.topology, lr);
    cfg.strict_literal = strict;
    cfg.validate().map_err(py_err)?;
    let inner = py.detach(|| harness::train(&cfg, bundle, &tc, seed)).map_err(py_err)?;
    Ok(PyRunResult { inner })
}

/// `{architecture: (mrr, wr)}` from `{topology: {architecture: nmse}}`.
#[pyfunction]
fn rank_metrics(table: BTreeMap<String, BTreeMap<String, f64>>) -> PyResult<BTreeMap<String, (f64, f64)>> {
    let m = harness::rank_metrics(&table).map_err(py_err)?;
    Ok(m.into_iter().map(|(a, s)| (a, (s.mrr, s.wr))).collect())
}

#[pyfunction]
#[pyo3(signature = (losses, alpha = harness::SMOOTHING_ALPHA, skip = harness::SMOOTHING_SKIP))]
fn smooth_curve(losses: Vec<f64>, alpha: f64, skip: usize) -> PyResult<Vec<f64>> {
    harness::smooth_curve(&losses, alpha, skip).map_err(py_err)
}

#[pyfunction]
fn expected_flow_entries(samples_per_split: usize, n_nodes: usize) -> usize {
    traffic::expected_flow_entries(samples_per_split, n_nodes)
}

#[pymodule]
#[pyo3(name = "pewflow")]
fn pewflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(route, m)?)?;
    m.add_function(wrap_pyfunction!(min_mlu, m)?)?;
    m.add_function(wrap_pyfunction!(gravity, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(rank_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_curve, m)?)?;
    m.add_function(wrap_pyfunction!(expected_flow_entries, m)?)?;
    m.add("SCHEMES", [Scheme::Ssp.as_str(), Scheme::Ecmp.as_str()])?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
