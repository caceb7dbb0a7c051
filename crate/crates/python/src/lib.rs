//! Python bindings. Reports cross the boundary as plain dicts and lists
//! (serialized through JSON), so they match the CLI output field for field.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use ::concave_npg as core;
use core::estimators::{expected_mlmc_cost as mlmc_cost, sample_batch};
use core::harness::{fit_loglog_slope as fit_slope, measure_bias_variance, BiasCampaign, CampaignMode, EstimatorKind};
use core::mdp::{suite, LaneBlock, Phase};
use core::npg::NpgConfig;
use core::oracle::{exact_quantities, reference_optimum as grid_optimum};
use core::{Error, PolicyParams, TabularMdp};

fn to_py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Numeric(_) | Error::Divergence { .. } | Error::Domain(_) => PyArithmeticError::new_err(msg),
        Error::Budget { .. } => PyRuntimeError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Mdp", frozen)]
struct PyMdp(TabularMdp);

#[pymethods]
impl PyMdp {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        TabularMdp::from_json_str(text).map(PyMdp).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        TabularMdp::load(path).map(PyMdp).map_err(to_py_err)
    }

    #[staticmethod]
    fn symmetric_bandit(gamma: f64) -> Self {
        PyMdp(suite::symmetric_bandit(gamma))
    }

    #[staticmethod]
    fn asymmetric_bandit(gamma: f64) -> Self {
        PyMdp(suite::asymmetric_bandit(gamma))
    }

    #[staticmethod]
    fn chain(gamma: f64) -> Self {
        PyMdp(suite::chain(gamma))
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.0.n_states
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.0.n_actions
    }

    #[getter]
    fn n_objectives(&self) -> usize {
        self.0.n_objectives
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.discount
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(n_states={}, n_actions={}, n_objectives={}, gamma={})",
            self.0.n_states, self.0.n_actions, self.0.n_objectives, self.0.discount
        )
    }
}

#[pyclass(name = "Scalarization", frozen)]
struct PyScalarization(core::Scalarization);

#[pymethods]
impl PyScalarization {
    #[staticmethod]
    fn alpha_fair(n_objectives: usize, alpha: f64, delta: f64) -> PyResult<Self> {
        core::Scalarization::alpha_fair(n_objectives, alpha, delta).map(PyScalarization).map_err(to_py_err)
    }

    #[staticmethod]
    fn weighted_sum(weights: Vec<f64>) -> PyResult<Self> {
        core::Scalarization::weighted_sum(weights).map(PyScalarization).map_err(to_py_err)
    }

    #[staticmethod]
    fn kinked_quadratic(kinks: Vec<f64>, kappa: f64) -> PyResult<Self> {
        core::Scalarization::kinked_quadratic(kinks, kappa).map(PyScalarization).map_err(to_py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    fn value(&self, j: Vec<f64>) -> PyResult<f64> {
        self.0.value(&j).map_err(to_py_err)
    }

    fn grad(&self, j: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.grad(&j).map(|g| g.iter().copied().collect()).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Scalarization({})", self.0.kind())
    }
}

fn policy_for(mdp: &TabularMdp, theta: Option<Vec<f64>>) -> PyResult<PolicyParams> {
    match theta {
        Some(t) => PolicyParams::from_theta(mdp.n_states, mdp.n_actions, t).map_err(to_py_err),
        None => Ok(PolicyParams::zeros(mdp.n_states, mdp.n_actions)),
    }
}

/// Truncated return vectors of `count` sampled trajectories.
#[pyfunction]
#[pyo3(signature = (mdp, horizon, count, theta=None, seed=0))]
fn simulate(mdp: &PyMdp, horizon: usize, count: usize, theta: Option<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let policy = policy_for(&mdp.0, theta)?;
    let block = LaneBlock::new(seed, 0, Phase::Campaign(0));
    let trajs = sample_batch(&mdp.0, &policy, horizon, count, &block).map_err(to_py_err)?;
    Ok(trajs.iter().map(|t| mdp.0.truncated_return(t).iter().copied().collect()).collect())
}

/// Exact values, gradients, Fisher matrix and NPG direction at `theta`.
#[pyfunction]
#[pyo3(signature = (mdp, f, theta=None, horizon=50))]
fn oracle<'py>(
    py: Python<'py>,
    mdp: &PyMdp,
    f: &PyScalarization,
    theta: Option<Vec<f64>>,
    horizon: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let policy = policy_for(&mdp.0, theta)?;
    to_py(py, &exact_quantities(&mdp.0, &policy, &f.0, horizon).map_err(to_py_err)?)
}

/// Grid-search optimum over the policy simplex of a small MDP.
#[pyfunction]
#[pyo3(signature = (mdp, f, grid_resolution=2000))]
fn reference_optimum<'py>(
    py: Python<'py>,
    mdp: &PyMdp,
    f: &PyScalarization,
    grid_resolution: usize,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &grid_optimum(&mdp.0, &f.0, grid_resolution).map_err(to_py_err)?)
}

/// Bias/variance campaign over batch sizes (or `B_max` values for MLMC).
#[pyfunction]
#[pyo3(signature = (mdp, f, horizon, b_list, theta=None, estimator="empirical", coupled_base=true, mode="enumerate", replications=10_000, seed=0, budget=1e6))]
#[allow(clippy::too_many_arguments)]
fn estimate_bias<'py>(
    py: Python<'py>,
    mdp: &PyMdp,
    f: &PyScalarization,
    horizon: usize,
    b_list: Vec<usize>,
    theta: Option<Vec<f64>>,
    estimator: &str,
    coupled_base: bool,
    mode: &str,
    replications: usize,
    seed: u64,
    budget: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let estimator = match estimator {
        "empirical" => EstimatorKind::Empirical,
        "mlmc" => EstimatorKind::Mlmc { coupled_base },
        other => return Err(PyValueError::new_err(format!("unknown estimator `{other}`"))),
    };
    let mode = match mode {
        "enumerate" => CampaignMode::Enumerate,
        "montecarlo" => CampaignMode::Montecarlo,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    let policy = policy_for(&mdp.0, theta)?;
    let campaign = BiasCampaign { horizon, estimator, b_list, replications, mode, seed, budget };
    let report = py
        .detach(|| measure_bias_variance(&mdp.0, &policy, &f.0, &campaign))
        .map_err(to_py_err)?;
    to_py(py, &report)
}

/// Runs NPG or MLMC-NPG; `config` is the JSON text of a run schedule.
#[pyfunction]
fn run_npg<'py>(py: Python<'py>, mdp: &PyMdp, f: &PyScalarization, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let config: NpgConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| core::npg::run_npg(&mdp.0, &f.0, &config)).map_err(to_py_err)?;
    to_py(py, &report)
}

/// Expected trajectories per MLMC draw, `⌊log₂ B_max⌋ + 2^{−⌊log₂ B_max⌋}`.
#[pyfunction]
fn expected_mlmc_cost(b_max: usize) -> f64 {
    mlmc_cost(b_max)
}

/// Least-squares slope, intercept and standard error on `(ln x, ln y)`.
#[pyfunction]
fn fit_loglog_slope<'py>(py: Python<'py>, points: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &fit_slope(&points).map_err(to_py_err)?)
}

#[pymodule]
#[pyo3(name = "concave_npg")]
fn concave_npg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyScalarization>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(reference_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_bias, m)?)?;
    m.add_function(wrap_pyfunction!(run_npg, m)?)?;
    m.add_function(wrap_pyfunction!(expected_mlmc_cost, m)?)?;
    m.add_function(wrap_pyfunction!(fit_loglog_slope, m)?)?;
    Ok(())
}
