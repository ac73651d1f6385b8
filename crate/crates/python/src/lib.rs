//! Python bindings for `ergodic-core`.
//!
//! Structured results cross the boundary as plain dicts and lists.

use ergodic_core::free_boundary::FreeBoundaries;
use ergodic_core::model::{
    eval_coefficients, make_filtered_inventory_model, make_frozen_factor_model, make_ou_inventory_model, validate_params,
    CostSpec, FilteredInventoryParams, FrozenFactorParams, ModelConfig, ModelSpec, OuInventoryParams,
    DEFAULT_TRUNCATION_SDS,
};
use ergodic_core::pipeline::{self, PipelineConfig, PipelineError, PipelineOutput};
use ergodic_core::simulate::{simulate_reflected, SimConfig};
use ergodic_core::stationary::{self, Density, DensityKind};
use ergodic_core::value_profile::LambdaProfile;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(ergodic, ErgodicError, PyException);

fn err(e: ergodic_core::Error) -> PyErr {
    match e {
        ergodic_core::Error::InvalidParameter { .. } | ergodic_core::Error::Config(_) | ergodic_core::Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => ErgodicError::new_err(other.to_string()),
    }
}

fn stage_err(e: PipelineError) -> PyErr {
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        ErgodicError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A model specification.
#[pyclass(frozen, module = "ergodic")]
struct Model {
    spec: ModelSpec,
}

#[pymethods]
impl Model {
    /// Inventory mean-reverting to an observable OU factor.
    #[staticmethod]
    #[pyo3(signature = (m, b, delta, sigma1, sigma2, rho=0.0, k_plus=1.0, k_minus=1.0, truncation_sds=DEFAULT_TRUNCATION_SDS))]
    #[allow(clippy::too_many_arguments)]
    fn ou_inventory(
        m: f64,
        b: f64,
        delta: f64,
        sigma1: f64,
        sigma2: f64,
        rho: f64,
        k_plus: f64,
        k_minus: f64,
        truncation_sds: f64,
    ) -> PyResult<Self> {
        let p = OuInventoryParams { m, b, delta, sigma1, sigma2, rho, k_plus, k_minus, truncation_sds };
        Ok(Model { spec: make_ou_inventory_model(p).map_err(err)? })
    }

    /// Two-regime inventory with a filtered regime probability as factor.
    #[staticmethod]
    #[pyo3(signature = (m1, m2, sigma, delta, lambda1, lambda2, k_plus=1.0, k_minus=1.0, eps_y=1e-6, cost_weight=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn filtered_inventory(
        m1: f64,
        m2: f64,
        sigma: f64,
        delta: f64,
        lambda1: f64,
        lambda2: f64,
        k_plus: f64,
        k_minus: f64,
        eps_y: f64,
        cost_weight: f64,
    ) -> PyResult<Self> {
        let p = FilteredInventoryParams { m1, m2, sigma, delta, lambda1, lambda2, k_plus, k_minus, eps_y };
        let spec = make_filtered_inventory_model(p, CostSpec::quadratic(cost_weight, 0.0)).map_err(err)?;
        Ok(Model { spec })
    }

    /// One-dimensional inventory with the factor frozen at `level`.
    #[staticmethod]
    #[pyo3(signature = (delta, sigma, level, k_plus=1.0, k_minus=1.0, half_width=1.0, cost_weight=0.5))]
    #[allow(clippy::too_many_arguments)]
    fn frozen_factor(
        delta: f64,
        sigma: f64,
        level: f64,
        k_plus: f64,
        k_minus: f64,
        half_width: f64,
        cost_weight: f64,
    ) -> PyResult<Self> {
        let p = FrozenFactorParams { delta, sigma, level, k_plus, k_minus, half_width };
        let spec = make_frozen_factor_model(p, CostSpec::quadratic(cost_weight, 0.0)).map_err(err)?;
        Ok(Model { spec })
    }

    /// Builds a model from the JSON `model` block of a run configuration.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Model { spec: cfg.build().map_err(err)? })
    }

    #[getter]
    fn kind(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.spec.kind)
    }

    #[getter]
    fn k_plus(&self) -> f64 {
        self.spec.k_plus
    }

    #[getter]
    fn k_minus(&self) -> f64 {
        self.spec.k_minus
    }

    #[getter]
    fn factor_domain(&self) -> (f64, f64) {
        self.spec.factor_domain
    }

    /// All coefficients at `(x, y)` as a dict.
    fn coefficients(&self, py: Python<'_>, x: f64, y: f64) -> PyResult<Py<PyAny>> {
        to_py(py, &eval_coefficients(&self.spec, x, y).map_err(err)?)
    }

    /// Standing-assumption checks as `{"checks": [...], "overall": bool}`.
    fn validate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &validate_params(&self.spec))
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, K+={}, K-={})", self.spec.kind, self.spec.k_plus, self.spec.k_minus)
    }
}

/// Output of a full solve: value field, boundaries, profile and checks.
#[pyclass(frozen, module = "ergodic")]
struct Solution {
    out: PipelineOutput,
}

#[pymethods]
impl Solution {
    #[getter]
    fn lambda_star(&self) -> Option<f64> {
        self.out.lambda_star
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.out.lambda.alpha
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.out.solution.iters
    }

    #[getter]
    fn x_nodes(&self) -> Vec<f64> {
        self.out.grid.x_nodes.clone()
    }

    #[getter]
    fn y_nodes(&self) -> Vec<f64> {
        self.out.grid.y_nodes.clone()
    }

    /// `U` as rows indexed by y, each row indexed by x.
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        let n_x = self.out.u.grid.x_nodes.len();
        self.out.u.values.chunks(n_x).map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn boundaries(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.out.boundaries)
    }

    #[getter]
    fn lambda_profile(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.out.lambda)
    }

    #[getter]
    fn density(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.out.density)
    }

    #[getter]
    fn checks(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.out.checks)
    }

    #[getter]
    fn simulation(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.out.sim)
    }

    #[getter]
    fn sensitivity(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.out.sensitivity)
    }

    fn __repr__(&self) -> String {
        format!("Solution(lambda_star={:?}, alpha={})", self.out.lambda_star, self.out.lambda.alpha)
    }
}

/// Solves a run configuration in memory.
#[pyfunction]
#[pyo3(signature = (config, with_sim=false))]
fn solve(py: Python<'_>, config: &str, with_sim: bool) -> PyResult<Solution> {
    let cfg = PipelineConfig::from_json(config).map_err(err)?;
    let out = py.detach(|| pipeline::compute(&cfg, with_sim)).map_err(stage_err)?;
    Ok(Solution { out })
}

/// Runs the pipeline, writes every artifact and returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None, with_sim=true))]
fn run_pipeline(py: Python<'_>, config: &str, output_dir: Option<String>, with_sim: bool) -> PyResult<Py<PyAny>> {
    let mut cfg = PipelineConfig::from_json(config).map_err(err)?;
    if let Some(d) = output_dir {
        cfg.output_dir = d.into();
    }
    let manifest = py.detach(|| pipeline::run_pipeline_with(&cfg, with_sim)).map_err(stage_err)?;
    to_py(py, &manifest)
}

/// Long-run cost of reflecting in the band given by boundary arrays.
#[pyfunction]
#[pyo3(signature = (model, y_nodes, a_plus, a_minus, x0, y0, horizon, dt, n_paths, seed))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &Model,
    y_nodes: Vec<f64>,
    a_plus: Vec<f64>,
    a_minus: Vec<f64>,
    x0: f64,
    y0: f64,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let h = if y_nodes.len() > 1 { (y_nodes[1] - y_nodes[0]).abs() } else { 1.0 };
    let fb = FreeBoundaries::new(y_nodes, a_plus, a_minus, h).map_err(err)?;
    let cfg = SimConfig::new(horizon, dt, n_paths, seed);
    let est = py.detach(|| simulate_reflected(&model.spec, &fb, x0, y0, &cfg)).map_err(err)?;
    to_py(py, &est)
}

/// Stationary law of `dY = (m − bY)dt + σ₂dW`, tabulated.
#[pyfunction]
fn ou_stationary_density(py: Python<'_>, m: f64, b: f64, sigma2: f64) -> PyResult<Py<PyAny>> {
    to_py(py, &stationary::ou_stationary_density(m, b, sigma2).map_err(err)?)
}

/// Stationary law of the two-regime filter, tabulated on `[eps_y, 1 − eps_y]`.
#[pyfunction]
#[pyo3(signature = (lambda1, lambda2, gamma, n_quad=2001, eps_y=1e-6))]
fn filter_stationary_density(
    py: Python<'_>,
    lambda1: f64,
    lambda2: f64,
    gamma: f64,
    n_quad: usize,
    eps_y: f64,
) -> PyResult<Py<PyAny>> {
    to_py(py, &stationary::filter_stationary_density(lambda1, lambda2, gamma, n_quad, eps_y).map_err(err)?)
}

/// `∫ λ(y) p(y) dy` for tabulated `λ` and density.
#[pyfunction]
fn ergodic_value(model: &Model, y_nodes: Vec<f64>, lambda_values: Vec<f64>, p_nodes: Vec<f64>, p_mass: Vec<f64>) -> PyResult<f64> {
    if lambda_values.len() != y_nodes.len() || p_mass.len() != p_nodes.len() {
        return Err(PyValueError::new_err("node and value arrays must have equal length"));
    }
    let lam = LambdaProfile { y_nodes, lambda_values, alpha: 0.0, model: model.spec.kind };
    let pinf = Density {
        kind: DensityKind::GridDensity,
        y_nodes: p_nodes,
        mass: p_mass,
        normalization_error: 0.0,
        clipped_mass: 0.0,
    };
    stationary::ergodic_value(&lam, &pinf).map_err(err)
}

#[pymodule]
fn ergodic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ErgodicError", m.py().get_type::<ErgodicError>())?;
    m.add_class::<Model>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ou_stationary_density, m)?)?;
    m.add_function(wrap_pyfunction!(filter_stationary_density, m)?)?;
    m.add_function(wrap_pyfunction!(ergodic_value, m)?)?;
    Ok(())
}
