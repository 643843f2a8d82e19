//! Python bindings: parameter sets, profiles on radial grids, the energy
//! functionals and the two constrained solvers.
//!
//! Reports cross the boundary as plain dicts built from their JSON form.

use std::sync::Arc;

use ckn_core::extremals::{self, best_constant_s, interp_constant_c, s_grid};
use ckn_core::fiber::{analyze_fiber, Branch};
use ckn_core::functionals;
use ckn_core::params::{self, thresholds};
use ckn_core::solver::{self, critical_level, SolverConfig};
use ckn_core::{CknError, GridSpec, ProblemParams, RadialFunction, RadialGrid};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(ckn, Error, PyException, "Failure reported by the numerical core.");

fn err(e: CknError) -> PyErr {
    Error::new_err(format!("{}: {e}", e.code()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| Error::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Validated parameter set `(N, a, b, q, beta, rho)`.
#[pyclass(name = "Params", frozen, from_py_object)]
#[derive(Clone)]
struct PyParams(ProblemParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (n=3, a=0.25, b=0.5, q=2.5, beta=0.5, rho=1.0))]
    fn new(n: u32, a: f64, b: f64, q: f64, beta: f64, rho: f64) -> PyResult<Self> {
        params::validate(n, a, b, q, beta, rho).map(PyParams).map_err(err)
    }

    #[getter]
    fn n(&self) -> u32 {
        self.0.n
    }
    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }
    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }
    #[getter]
    fn q(&self) -> f64 {
        self.0.q
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }

    fn with_beta(&self, beta: f64) -> PyResult<Self> {
        self.0.with_beta(beta).map(PyParams).map_err(err)
    }

    fn with_q(&self, q: f64) -> PyResult<Self> {
        self.0.with_q(q).map(PyParams).map_err(err)
    }

    fn at_mass_critical(&self) -> PyResult<Self> {
        self.0.at_mass_critical().map(PyParams).map_err(err)
    }

    fn exponents<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.exponents())
    }

    /// Best constants, thresholds and the critical level on the default grid.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = best_constant_s(&self.0, &s_grid(self.0.n).map_err(err)?).map_err(err)?;
        let grid = GridSpec::default().build(self.0.n).map_err(err)?;
        let c = interp_constant_c(&self.0, &grid, 0).map_err(err)?.value;
        let th = thresholds(&self.0, s, c).map_err(err)?;
        let out = to_py(py, &th)?;
        out.set_item("critical_level", critical_level(&self.0, s))?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "Params(n={}, a={}, b={}, q={}, beta={}, rho={})",
            p.n, p.a, p.b, p.q, p.beta, p.rho
        )
    }
}

/// Log-uniform radial grid `r_i = exp(s_i)`.
#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone)]
struct PyGrid(Arc<RadialGrid>);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (dim=3, n=2048, s_min=None, s_max=None))]
    fn new(dim: u32, n: usize, s_min: Option<f64>, s_max: Option<f64>) -> PyResult<Self> {
        let d = GridSpec::default();
        GridSpec {
            s_min: s_min.unwrap_or(d.s_min),
            s_max: s_max.unwrap_or(d.s_max),
            n,
        }
        .build(dim)
        .map(PyGrid)
        .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.0.nodes().to_vec()
    }

    #[getter]
    fn dim(&self) -> u32 {
        self.0.dim()
    }
}

/// Radial profile: values at the nodes of a grid.
#[pyclass(name = "Profile", frozen, from_py_object)]
#[derive(Clone)]
struct PyProfile(RadialFunction);

#[pymethods]
impl PyProfile {
    #[new]
    fn new(grid: &PyGrid, values: Vec<f64>) -> PyResult<Self> {
        RadialFunction::new(grid.0.clone(), values).map(PyProfile).map_err(err)
    }

    /// Gaussian `amplitude * exp(-(r / width)^2)`.
    #[staticmethod]
    #[pyo3(signature = (grid, width=1.0, amplitude=1.0))]
    fn gaussian(grid: &PyGrid, width: f64, amplitude: f64) -> PyResult<Self> {
        RadialFunction::from_fn(grid.0.clone(), |r| amplitude * (-(r / width).powi(2)).exp())
            .map(PyProfile)
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, dim=3))]
    fn load_csv(path: &str, dim: u32) -> PyResult<Self> {
        RadialFunction::load_csv(path, dim).map(PyProfile).map_err(err)
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        self.0.save_csv(path).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    fn scaled(&self, c: f64) -> Self {
        PyProfile(self.0.scaled(c))
    }

    /// Mass-preserving dilation `t * u`.
    fn dilate(&self, t: f64, params: &PyParams) -> PyResult<Self> {
        functionals::dilate(&self.0, t, &params.0).map(PyProfile).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

#[pyfunction]
fn energy(u: &PyProfile, params: &PyParams) -> f64 {
    functionals::energy(&u.0, &params.0)
}

#[pyfunction]
fn pohozaev(u: &PyProfile, params: &PyParams) -> f64 {
    functionals::pohozaev(&u.0, &params.0)
}

#[pyfunction]
fn mass_sq(u: &PyProfile, params: &PyParams) -> f64 {
    functionals::mass_sq(&u.0, params.0.a)
}

#[pyfunction]
fn fiber_coefficients<'py>(py: Python<'py>, u: &PyProfile, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &functionals::fiber_coefficients(&u.0, &params.0))
}

#[pyfunction]
fn fiber<'py>(py: Python<'py>, u: &PyProfile, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analyze_fiber(&u.0, &params.0, None).map_err(err)?)
}

#[pyfunction]
fn estimate_s<'py>(py: Python<'py>, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
    let grid = s_grid(params.0.n).map_err(err)?;
    to_py(py, &extremals::estimate_s(&params.0, &grid).map_err(err)?)
}

#[pyfunction]
fn classify_region<'py>(py: Python<'py>, n: u32, a: f64, b: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &extremals::classify_region(n, a, b).map_err(err)?)
}

fn solve(
    py: Python<'_>,
    params: &PyParams,
    branch: &str,
    nodes: usize,
    max_iters: Option<usize>,
) -> PyResult<(Py<PyAny>, PyProfile)> {
    let grid = GridSpec {
        n: nodes,
        ..GridSpec::default()
    }
    .build(params.0.n)
    .map_err(err)?;
    let mut cfg = match branch {
        "plus" => SolverConfig::plus(),
        "minus" => SolverConfig::minus(),
        other => return Err(Error::new_err(format!("unknown branch {other:?}"))),
    };
    if let Some(m) = max_iters {
        cfg.max_iters = m;
    }
    let p = params.0;
    // the solvers run on the rayon pool; release the interpreter meanwhile
    let result = py.detach(move || match cfg.branch {
        Branch::Plus => solver::minimize_plus(&p, &cfg, &grid).map(|r| (r, None)),
        _ => solver::minimize_minus(&p, &cfg, &grid, None).map(|(r, l)| (r, Some(l))),
    });
    let (report, level) = result.map_err(err)?;
    let out = to_py(py, &report)?;
    if let Some(level) = level {
        out.set_item("level", to_py(py, &level)?)?;
    }
    Ok((out.unbind(), PyProfile(report.profile)))
}

/// Ground state on the Plus branch. Returns `(report, profile)`.
#[pyfunction]
#[pyo3(signature = (params, nodes=2048, max_iters=None))]
fn minimize_plus(
    py: Python<'_>,
    params: &PyParams,
    nodes: usize,
    max_iters: Option<usize>,
) -> PyResult<(Py<PyAny>, PyProfile)> {
    solve(py, params, "plus", nodes, max_iters)
}

/// Mountain-pass solution on the Minus branch with its level checks.
#[pyfunction]
#[pyo3(signature = (params, nodes=2048, max_iters=None))]
fn minimize_minus(
    py: Python<'_>,
    params: &PyParams,
    nodes: usize,
    max_iters: Option<usize>,
) -> PyResult<(Py<PyAny>, PyProfile)> {
    solve(py, params, "minus", nodes, max_iters)
}

#[pymodule]
fn ckn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("Error", m.py().get_type::<Error>())?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyProfile>()?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(pohozaev, m)?)?;
    m.add_function(wrap_pyfunction!(mass_sq, m)?)?;
    m.add_function(wrap_pyfunction!(fiber_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(fiber, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_s, m)?)?;
    m.add_function(wrap_pyfunction!(classify_region, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_plus, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_minus, m)?)?;
    Ok(())
}
