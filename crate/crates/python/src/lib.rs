use std::collections::BTreeMap;

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nodegen::graph::{sbm_generate as sbm, SbmParams};
use nodegen::harness::{run_experiment as run, ExperimentConfig};
use nodegen::models::ConfidenceMetric;
use nodegen::{FeatureMatrix, SmoothingParams};

fn py_err(e: nodegen::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    FeatureMatrix::from_rows(&rows).map_err(py_err)
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Undirected graph over nodes `0..n`.
#[pyclass(name = "Graph", module = "nodegen_py", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: nodegen::Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (node_count, edges = Vec::new()))]
    fn new(node_count: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        let inner = nodegen::Graph::from_edges(node_count, edges).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Returns `False` when the edge was already present.
    fn add_edge(&mut self, u: usize, v: usize) -> PyResult<bool> {
        self.inner.add_edge(u, v).map_err(py_err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn degree(&self, node: usize) -> PyResult<usize> {
        self.check(node)?;
        Ok(self.inner.degree(node))
    }

    fn neighbors(&self, node: usize) -> PyResult<Vec<usize>> {
        self.check(node)?;
        Ok(self.inner.neighbors(node).to_vec())
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn component_count(&self) -> usize {
        self.inner.component_count()
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

impl PyGraph {
    fn check(&self, node: usize) -> PyResult<()> {
        if node < self.inner.node_count() {
            Ok(())
        } else {
            Err(py_err(nodegen::Error::NodeOutOfRange {
                node,
                node_count: self.inner.node_count(),
            }))
        }
    }
}

/// Planted-partition graph: returns `(graph, features, labels)`.
#[pyfunction]
#[pyo3(signature = (blocks = 4, nodes_per_block = 100, p_in = 0.3, p_out = 0.02, feature_dim = 16, feature_noise = 1.0, seed = 0))]
fn sbm_generate(
    blocks: usize,
    nodes_per_block: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    feature_noise: f64,
    seed: u64,
) -> PyResult<(PyGraph, Vec<Vec<f64>>, BTreeMap<usize, usize>)> {
    let ds = sbm(&SbmParams {
        blocks,
        nodes_per_block,
        p_in,
        p_out,
        feature_dim,
        feature_noise,
        seed,
    })
    .map_err(py_err)?;
    let features = to_rows(&ds.features.into_inner());
    Ok((PyGraph { inner: ds.graph }, features, ds.labels.iter().collect()))
}

/// Laplacian-smoothness embedding of `features` over `graph`.
#[pyfunction]
#[pyo3(signature = (graph, features, lam = 1.0, tolerance = 1e-8, max_iters = 10_000))]
fn smooth(graph: &PyGraph, features: Vec<Vec<f64>>, lam: f64, tolerance: f64, max_iters: usize) -> PyResult<Vec<Vec<f64>>> {
    let params = SmoothingParams {
        lambda: lam,
        tolerance,
        max_iters,
        ..Default::default()
    };
    let h = nodegen::smoothing::smooth(&graph.inner, &matrix(features)?, &params).map_err(py_err)?;
    Ok(to_rows(h.matrix()))
}

/// Expected embedding of a node of degree `degree` after a virtual node
/// with feature `x` attaches with probability `p`.
#[pyfunction]
#[pyo3(signature = (h, x, degree, p, lam = 1.0, lam_tilde = 1.0))]
fn expected_update(h: Vec<f64>, x: Vec<f64>, degree: f64, p: f64, lam: f64, lam_tilde: f64) -> PyResult<Vec<f64>> {
    if h.len() != x.len() {
        return Err(PyValueError::new_err("h and x must have the same length"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(PyValueError::new_err("p must lie in [0, 1]"));
    }
    let params = SmoothingParams {
        lambda: lam,
        lambda_tilde: lam_tilde,
        ..Default::default()
    };
    params.validate().map_err(py_err)?;
    Ok(nodegen::smoothing::expected_update(&h, &x, degree, p, &params))
}

/// Confidence of a probability vector: `peakedness`, `entropy` or `margin`.
#[pyfunction]
#[pyo3(signature = (probs, metric = "peakedness"))]
fn confidence(probs: Vec<f64>, metric: &str) -> PyResult<f64> {
    let metric: ConfidenceMetric = metric.parse().map_err(py_err)?;
    nodegen::models::confidence(&probs, metric).map_err(py_err)
}

/// Runs a full experiment from a JSON config and returns the report as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let report = py.detach(|| run(&config)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs the property suites; returns `(name, passed, detail)` per suite.
#[pyfunction]
fn selftest(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(nodegen::verify::selftest)
        .into_iter()
        .map(|o| (o.name.to_string(), o.passed, o.detail))
        .collect()
}

#[pymodule]
fn nodegen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(sbm_generate, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(expected_update, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
