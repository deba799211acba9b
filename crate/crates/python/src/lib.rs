//! Python bindings: parameters, the kernel solver, feedback, simulation and
//! the mean-variance frontier.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use delayed_lq::grid::{export_csv, GridSpec, KernelGrid, KernelId};
use delayed_lq::markowitz::{eta_star, frontier, inner_value, two_asset_frontier};
use delayed_lq::model::{default_cap, feasibility, ModelParams};
use delayed_lq::sim::{
    feedback_single, feedback_two_asset, martingale_residual, simulate, simulate_map, value_of,
    InitialSegment, MCStats, OptimalFeedback, SimConfig,
};
use delayed_lq::solver::{solve_single, solve_two_asset, SolveConfig, SolveDiagnostics, TwoAssetParams};

create_exception!(delayed_lq, DelayedLqError, PyException);

fn to_py(e: delayed_lq::Error) -> PyErr {
    DelayedLqError::new_err(format!("{}: {e}", e.kind()))
}

/// Initial control segment: a constant or `m+1` values on `[−d, 0]`.
#[derive(FromPyObject)]
enum Gamma {
    Constant(f64),
    Table(Vec<f64>),
}

fn segment(gamma: Option<Gamma>) -> InitialSegment {
    match gamma {
        None => InitialSegment::Constant(0.0),
        Some(Gamma::Constant(g)) => InitialSegment::Constant(g),
        Some(Gamma::Table(v)) => InitialSegment::Table(v),
    }
}

#[pyclass(name = "ModelParams", frozen, from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    fn new(b: f64, sigma: f64, d: f64, horizon: f64) -> PyResult<Self> {
        let inner = ModelParams::new(b, sigma, d, horizon).map_err(to_py)?;
        Ok(PyModelParams { inner })
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn d(&self) -> f64 {
        self.inner.d
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// Feasibility sequence and sufficient existence condition.
    #[pyo3(signature = (cap=None))]
    fn feasibility<'py>(&self, py: Python<'py>, cap: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let cap = cap.unwrap_or_else(|| default_cap(&self.inner));
        let r = feasibility(&self.inner, cap).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("a_seq", r.a_seq)?;
        out.set_item("n_cal", r.n_cal)?;
        out.set_item("n_cal_capped", r.n_cal_capped)?;
        out.set_item("sufficient_holds", r.sufficient_holds)?;
        out.set_item("margin", r.margin)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(b={}, sigma={}, d={}, horizon={})",
            p.b, p.sigma, p.d, p.horizon
        )
    }
}

#[pyclass(name = "TwoAssetParams", frozen, from_py_object)]
#[derive(Clone)]
struct PyTwoAssetParams {
    inner: TwoAssetParams,
}

#[pymethods]
impl PyTwoAssetParams {
    #[new]
    fn new(
        sigma1: f64,
        sigma2: f64,
        lambda1: f64,
        lambda2: f64,
        rho: f64,
        d: f64,
        horizon: f64,
    ) -> PyResult<Self> {
        let inner = TwoAssetParams {
            sigma1,
            sigma2,
            lambda1,
            lambda2,
            rho,
            d,
            horizon,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyTwoAssetParams { inner })
    }

    /// The single-asset model seen by the delayed asset.
    fn effective(&self) -> PyModelParams {
        PyModelParams {
            inner: self.inner.effective_params(),
        }
    }
}

/// A solved set of Riccati kernels.
#[pyclass(name = "KernelGrid", frozen)]
struct PyKernelGrid {
    inner: KernelGrid,
    diagnostics: SolveDiagnostics,
}

fn kernel(name: &str) -> PyResult<KernelId> {
    name.parse().map_err(to_py)
}

#[pymethods]
impl PyKernelGrid {
    #[getter]
    fn m(&self) -> usize {
        self.inner.spec().m
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.spec().h
    }

    #[getter]
    fn n_t(&self) -> usize {
        self.inner.spec().n_t
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.spec().horizon
    }

    #[getter]
    fn positivity_ok(&self) -> bool {
        self.diagnostics.positivity_ok
    }

    #[getter]
    fn min_p11(&self) -> f64 {
        self.diagnostics.min_p11
    }

    /// Time nodes `0, h, ..., T`.
    fn times(&self) -> Vec<f64> {
        let spec = self.inner.spec();
        (0..=spec.n_t).map(|i| spec.t(i)).collect()
    }

    /// Evaluates `p11`, `p12`, `p2hat2` or `p22` by piecewise-linear
    /// interpolation between nodes.
    #[pyo3(signature = (which, t, s=None, r=None))]
    fn eval(&self, which: &str, t: f64, s: Option<f64>, r: Option<f64>) -> PyResult<f64> {
        self.inner.eval(kernel(which)?, t, s, r).map_err(to_py)
    }

    fn p11(&self, t: f64) -> PyResult<f64> {
        self.eval("p11", t, None, None)
    }

    fn export_csv(&self, which: &str, path: PathBuf) -> PyResult<()> {
        export_csv(&self.inner, kernel(which)?, &path).map_err(to_py)
    }

    /// Value of the problem started at state `x` with initial segment `gamma`.
    #[pyo3(signature = (x, gamma=None))]
    fn value(&self, x: f64, gamma: Option<Gamma>) -> PyResult<f64> {
        value_of(&self.inner, x, &segment(gamma)).map_err(to_py)
    }

    /// Optimal delayed control at node time `t`; `hist` holds the `m`
    /// controls chosen at `t−d, ..., t−h`.
    fn feedback(&self, t: f64, x: f64, hist: Vec<f64>, xi: f64) -> PyResult<f64> {
        feedback_single(&self.inner, t, x, &hist, xi).map_err(to_py)
    }

    /// `(alpha, beta)` for a two-asset grid.
    fn feedback_two_asset(&self, t: f64, x: f64, beta_hist: Vec<f64>, xi: f64) -> PyResult<(f64, f64)> {
        feedback_two_asset(&self.inner, t, x, &beta_hist, xi).map_err(to_py)
    }

    /// Terminal states of `n_paths` optimally controlled paths.
    #[pyo3(signature = (n_paths, seed, x0, xi, gamma=None, zero_noise=false))]
    fn simulate_terminal(
        &self,
        py: Python<'_>,
        n_paths: usize,
        seed: u64,
        x0: f64,
        xi: f64,
        gamma: Option<Gamma>,
        zero_noise: bool,
    ) -> PyResult<Vec<f64>> {
        let gamma = segment(gamma);
        let cfg = sim_config(n_paths, seed, x0, zero_noise);
        py.detach(|| {
            let law = OptimalFeedback { grid: &self.inner, xi };
            simulate_map(&self.inner, &gamma, &cfg, &law, |p| p.terminal())
        })
        .map_err(to_py)
    }

    /// Full paths as dicts with `times`, `x`, `alpha` (from `−d`) and `dw`.
    #[pyo3(signature = (n_paths, seed, x0, xi, gamma=None, zero_noise=false))]
    fn simulate_paths<'py>(
        &self,
        py: Python<'py>,
        n_paths: usize,
        seed: u64,
        x0: f64,
        xi: f64,
        gamma: Option<Gamma>,
        zero_noise: bool,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let gamma = segment(gamma);
        let cfg = sim_config(n_paths, seed, x0, zero_noise);
        let law = OptimalFeedback { grid: &self.inner, xi };
        let paths = simulate(&self.inner, &gamma, &cfg, &law).map_err(to_py)?;
        paths
            .into_iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("times", p.times)?;
                d.set_item("x", p.x)?;
                d.set_item("alpha", p.alpha)?;
                d.set_item("dw", p.dw)?;
                Ok(d)
            })
            .collect()
    }

    /// Mean and standard error of the cumulative martingale residual.
    #[pyo3(signature = (n_paths, seed, x0, xi, gamma=None))]
    fn martingale_check(
        &self,
        n_paths: usize,
        seed: u64,
        x0: f64,
        xi: f64,
        gamma: Option<Gamma>,
    ) -> PyResult<(f64, f64)> {
        let gamma = segment(gamma);
        let cfg = sim_config(n_paths, seed, x0, false);
        let law = OptimalFeedback { grid: &self.inner, xi };
        let totals = simulate_map(&self.inner, &gamma, &cfg, &law, |p| {
            martingale_residual(&self.inner, p, xi).map(|t| t.cumulative())
        })
        .map_err(to_py)?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
        let s = MCStats::from_samples(&totals);
        Ok((s.mean, s.std_error))
    }
}

fn sim_config(n_paths: usize, seed: u64, x0: f64, zero_noise: bool) -> SimConfig {
    SimConfig {
        n_paths,
        master_seed: seed,
        x0,
        zero_noise,
        h_sim: None,
    }
}

fn solve_config(tol: Option<f64>, max_iter: Option<usize>) -> SolveConfig {
    let mut cfg = SolveConfig::default();
    cfg.tol = tol.unwrap_or(cfg.tol);
    cfg.max_iter = max_iter.unwrap_or(cfg.max_iter);
    cfg
}

/// Solves the single-asset kernels with `m` nodes per delay interval.
#[pyfunction]
#[pyo3(signature = (params, m, tol=None, max_iter=None))]
fn solve(
    py: Python<'_>,
    params: PyModelParams,
    m: usize,
    tol: Option<f64>,
    max_iter: Option<usize>,
) -> PyResult<PyKernelGrid> {
    let spec = GridSpec::for_params(&params.inner, m).map_err(to_py)?;
    let cfg = solve_config(tol, max_iter);
    let (inner, diagnostics) = py
        .detach(|| solve_single(&params.inner, &spec, &cfg))
        .map_err(to_py)?;
    Ok(PyKernelGrid { inner, diagnostics })
}

#[pyfunction(name = "solve_two_asset")]
#[pyo3(signature = (params, m, tol=None, max_iter=None))]
fn solve_two(
    py: Python<'_>,
    params: PyTwoAssetParams,
    m: usize,
    tol: Option<f64>,
    max_iter: Option<usize>,
) -> PyResult<PyKernelGrid> {
    let spec = GridSpec::new(params.inner.d, params.inner.horizon, m).map_err(to_py)?;
    let cfg = solve_config(tol, max_iter);
    let (inner, diagnostics) = py
        .detach(|| solve_two_asset(&params.inner, &spec, &cfg))
        .map_err(to_py)?;
    Ok(PyKernelGrid { inner, diagnostics })
}

/// `V₀(ξ)` of the inner tracking problem.
#[pyfunction(name = "inner_value")]
#[pyo3(signature = (grid, x0, xi, gamma=None))]
fn py_inner_value(grid: &PyKernelGrid, x0: f64, xi: f64, gamma: Option<Gamma>) -> PyResult<f64> {
    inner_value(&grid.inner, x0, &segment(gamma), xi).map_err(to_py)
}

/// `(eta_star, xi_star)` for target mean `c`.
#[pyfunction(name = "eta_star")]
#[pyo3(signature = (grid, x0, c, gamma=None))]
fn py_eta_star(grid: &PyKernelGrid, x0: f64, c: f64, gamma: Option<Gamma>) -> PyResult<(f64, f64)> {
    eta_star(&grid.inner, x0, c, &segment(gamma)).map_err(to_py)
}

/// Frontier points as dicts with keys `c`, `eta_star`, `xi_star`, `variance`.
#[pyfunction(name = "frontier")]
#[pyo3(signature = (grid, x0, c_list, gamma=None))]
fn py_frontier<'py>(
    py: Python<'py>,
    grid: &PyKernelGrid,
    x0: f64,
    c_list: Vec<f64>,
    gamma: Option<Gamma>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let gamma = segment(gamma);
    let points = if grid.inner.two_asset().is_some() {
        two_asset_frontier(&grid.inner, x0, &gamma, &c_list)
    } else {
        frontier(&grid.inner, x0, &gamma, &c_list)
    }
    .map_err(to_py)?;
    points
        .into_iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("c", p.c)?;
            d.set_item("eta_star", p.eta_star)?;
            d.set_item("xi_star", p.xi_star)?;
            d.set_item("variance", p.variance)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "delayed_lq")]
fn delayed_lq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyTwoAssetParams>()?;
    m.add_class::<PyKernelGrid>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_two, m)?)?;
    m.add_function(wrap_pyfunction!(py_inner_value, m)?)?;
    m.add_function(wrap_pyfunction!(py_eta_star, m)?)?;
    m.add_function(wrap_pyfunction!(py_frontier, m)?)?;
    m.add("DelayedLqError", m.py().get_type::<DelayedLqError>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_defaults_to_zero() {
        assert_eq!(segment(None), InitialSegment::Constant(0.0));
        assert_eq!(
            segment(Some(Gamma::Table(vec![1.0, 2.0]))),
            InitialSegment::Table(vec![1.0, 2.0])
        );
    }
}
