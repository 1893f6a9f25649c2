//! Python bindings: problems, the spectral integrator, trajectories and the
//! refinement fits.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spectral_vi_core::diagnostics::{self, SeriesReport};
use spectral_vi_core::problems::{nbody_from_ephemeris, read_ephemeris, GAUSSIAN_G};
use spectral_vi_core::{
    Error, PhaseState, Problem, QuadratureRule, SolverConfig, SolverStrategy, SpectralIntegrator, Trajectory,
};

fn value_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A benchmark problem with its initial state.
#[pyclass(name = "Problem", module = "spectral_vi", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyProblem {
    inner: Problem,
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    #[pyo3(signature = (q0 = 1.0, p0 = 0.0))]
    fn harmonic(q0: f64, p0: f64) -> Self {
        Self { inner: Problem::harmonic(q0, p0) }
    }

    #[staticmethod]
    fn free_particle(masses: Vec<f64>, q0: Vec<f64>, p0: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Problem::free_particle(masses, q0, p0).map_err(value_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (mu = 1.0, q0 = [0.4, 0.0], v0 = [0.0, 2.0]))]
    fn kepler(mu: f64, q0: [f64; 2], v0: [f64; 2]) -> PyResult<Self> {
        Ok(Self { inner: Problem::kepler_with(mu, q0, v0).map_err(value_err)? })
    }

    /// N-body problem from an ephemeris CSV, optionally restricted to `bodies`.
    #[staticmethod]
    #[pyo3(signature = (path, g = GAUSSIAN_G, bodies = None))]
    fn nbody(path: std::path::PathBuf, g: f64, bodies: Option<Vec<String>>) -> PyResult<Self> {
        let mut records = read_ephemeris(&path).map_err(value_err)?;
        if let Some(keep) = bodies {
            for b in &keep {
                if !records.iter().any(|r| &r.name == b) {
                    return Err(PyValueError::new_err(format!("unknown body {b}")));
                }
            }
            records.retain(|r| keep.contains(&r.name));
        }
        let cfg = nbody_from_ephemeris(&records, g).map_err(value_err)?;
        Ok(Self { inner: Problem::nbody(&cfg).map_err(value_err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.initial.q.len()
    }

    #[getter]
    fn q0(&self) -> Vec<f64> {
        self.inner.initial.q.clone()
    }

    #[getter]
    fn p0(&self) -> Vec<f64> {
        self.inner.initial.p.clone()
    }

    #[getter]
    fn body_names(&self) -> Vec<String> {
        self.inner.body_names.clone()
    }

    fn energy(&self, q: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
        let v = self.inner.system.velocity_from_momentum(&p);
        spectral_vi_core::system::energy(self.inner.system.as_ref(), &q, &v).map_err(value_err)
    }

    /// Exact position at time `t`, or `None` without a closed form.
    fn reference_position(&self, t: f64) -> PyResult<Option<Vec<f64>>> {
        match &self.inner.reference {
            Some(r) => Ok(Some(r.position(t).map_err(value_err)?)),
            None => Ok(None),
        }
    }

    fn __repr__(&self) -> String {
        format!("Problem({:?}, dim={})", self.inner.name, self.dim())
    }
}

fn parse_strategy(s: &str) -> PyResult<SolverStrategy> {
    match s {
        "fixed-point" => Ok(SolverStrategy::FixedPoint),
        "newton" => Ok(SolverStrategy::Newton),
        "fixed-point-then-newton" => Ok(SolverStrategy::FixedPointThenNewton),
        _ => Err(PyValueError::new_err(format!("unknown strategy {s}"))),
    }
}

/// Spectral variational integrator of order `n` with step `h`.
#[pyclass(name = "Integrator", module = "spectral_vi", frozen)]
pub struct PyIntegrator {
    problem: Problem,
    inner: SpectralIntegrator,
    solver: SolverConfig,
}

#[pymethods]
impl PyIntegrator {
    #[new]
    #[pyo3(signature = (problem, n, h, m = None, tol = 1e-12, max_iter = 200, strategy = "fixed-point-then-newton"))]
    fn new(
        problem: &PyProblem,
        n: usize,
        h: f64,
        m: Option<usize>,
        tol: f64,
        max_iter: usize,
        strategy: &str,
    ) -> PyResult<Self> {
        let problem = problem.inner.clone();
        let quad = QuadratureRule::gauss_legendre(m.unwrap_or(2 * n)).map_err(value_err)?;
        let inner = SpectralIntegrator::with_quadrature(problem.lagrangian(), n, h, quad).map_err(value_err)?;
        let solver = SolverConfig {
            tol,
            max_iter,
            strategy: parse_strategy(strategy)?,
        };
        solver.validate().map_err(value_err)?;
        Ok(Self { problem, inner, solver })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    /// One step of the discrete map: `(q, p, t) -> (q', p', t + h)`.
    #[pyo3(signature = (q, p, t = 0.0))]
    fn step(&self, py: Python<'_>, q: Vec<f64>, p: Vec<f64>, t: f64) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
        let state = PhaseState::new(q, p, t);
        let res = py
            .detach(|| self.inner.step(&state, &self.solver))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok((res.next.q, res.next.p, res.next.t))
    }

    /// Integrate from the problem's initial state. A failing step raises
    /// `RuntimeError` unless `partial` is set, in which case the trajectory
    /// up to the failure is returned.
    #[pyo3(signature = (steps, partial = false))]
    fn integrate(&self, py: Python<'_>, steps: usize, partial: bool) -> PyResult<PyTrajectory> {
        let out = py.detach(|| self.inner.integrate(&self.problem.initial, steps, &self.solver));
        match out {
            Ok(t) => Ok(PyTrajectory::new(t, self.problem.clone(), None)),
            Err(f) if partial => {
                let f = *f;
                let msg = format!("step {}: {}", f.failed_step, f.error);
                Ok(PyTrajectory::new(f.partial, self.problem.clone(), Some(msg)))
            }
            Err(f) => Err(PyRuntimeError::new_err(format!("step {}: {}", f.failed_step, f.error))),
        }
    }

    /// Sufficient step size bound for fixed-point convergence at Lipschitz constant `lipschitz`.
    fn contraction_bound(&self, lipschitz: f64) -> PyResult<f64> {
        self.inner.contraction_bound(lipschitz).map_err(value_err)
    }
}

fn series_dict(py: Python<'_>, r: &SeriesReport) -> PyResult<Py<PyAny>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("reference", r.reference)?;
    d.set_item("max_abs_error", r.max_abs_error)?;
    d.set_item("drift_ratio", r.drift_ratio)?;
    d.set_item("values", r.values.clone())?;
    Ok(d.into_any().unbind())
}

/// States and Galerkin curves of one run.
#[pyclass(name = "Trajectory", module = "spectral_vi", frozen)]
pub struct PyTrajectory {
    inner: Trajectory,
    problem: Problem,
    #[pyo3(get)]
    failure: Option<String>,
}

impl PyTrajectory {
    fn new(inner: Trajectory, problem: Problem, failure: Option<String>) -> Self {
        Self { inner, problem, failure }
    }
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.states.iter().map(|s| s.t).collect()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        self.inner.states.iter().map(|s| s.q.clone()).collect()
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        self.inner.states.iter().map(|s| s.p.clone()).collect()
    }

    /// Position on the Galerkin curve at `t`.
    fn eval(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner
            .eval(t)
            .ok_or_else(|| PyValueError::new_err(format!("t = {t} outside the trajectory")))
    }

    fn eval_deriv(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner
            .eval_deriv(t)
            .ok_or_else(|| PyValueError::new_err(format!("t = {t} outside the trajectory")))
    }

    /// Max endpoint and curve errors against the closed-form solution.
    #[pyo3(signature = (samples_per_step = 16))]
    fn errors(&self, samples_per_step: usize) -> PyResult<(f64, f64)> {
        let r = self
            .problem
            .reference
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("problem has no reference solution"))?;
        let first_err = std::cell::RefCell::new(None);
        let e = spectral_vi_core::sup_error(
            &self.inner,
            |t| {
                r.position(t).unwrap_or_else(|e| {
                    first_err.borrow_mut().get_or_insert(e);
                    vec![f64::NAN; self.inner.states[0].q.len()]
                })
            },
            samples_per_step,
        );
        if let Some(e) = first_err.into_inner() {
            return Err(value_err(e));
        }
        Ok((e.endpoint, e.curve))
    }

    #[pyo3(signature = (samples_per_step = 16))]
    fn energy(&self, py: Python<'_>, samples_per_step: usize) -> PyResult<Py<PyAny>> {
        let sys = self.problem.lagrangian();
        let r = diagnostics::energy_series(&self.inner, sys.as_ref(), samples_per_step).map_err(value_err)?;
        series_dict(py, &r)
    }

    /// Continuous Noether quantity along the curves; `None` without a symmetry.
    #[pyo3(signature = (samples_per_step = 16))]
    fn noether(&self, py: Python<'_>, samples_per_step: usize) -> PyResult<Option<Py<PyAny>>> {
        let Some(g) = &self.problem.generator else { return Ok(None) };
        let sys = self.problem.lagrangian();
        let r = diagnostics::noether_series(&self.inner, sys.as_ref(), g, samples_per_step).map_err(value_err)?;
        series_dict(py, &r).map(Some)
    }

    /// Noether quantity of the discrete momenta at the step endpoints.
    fn discrete_noether(&self, py: Python<'_>) -> PyResult<Option<Py<PyAny>>> {
        let Some(g) = &self.problem.generator else { return Ok(None) };
        series_dict(py, &diagnostics::discrete_noether_series(&self.inner, g)).map(Some)
    }
}

fn fit_dict(py: Python<'_>, f: diagnostics::RateFit) -> PyResult<Py<PyAny>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("fitted", f.fitted)?;
    d.set_item("r_squared", f.r_squared)?;
    d.set_item("points_used", f.points_used)?;
    d.set_item("floor", f.floor)?;
    Ok(d.into_any().unbind())
}

/// Fit `error ≈ C·K^n`; returns a dict with `fitted = K`.
#[pyfunction]
#[pyo3(signature = (ns, errors, scale = 1.0))]
fn fit_geometric(py: Python<'_>, ns: Vec<f64>, errors: Vec<f64>, scale: f64) -> PyResult<Py<PyAny>> {
    fit_dict(py, diagnostics::fit_geometric(&ns, &errors, scale).map_err(value_err)?)
}

/// Fit `error ≈ C·h^r`; returns a dict with `fitted = r`.
#[pyfunction]
#[pyo3(signature = (hs, errors, scale = 1.0))]
fn fit_order(py: Python<'_>, hs: Vec<f64>, errors: Vec<f64>, scale: f64) -> PyResult<Py<PyAny>> {
    fit_dict(py, diagnostics::fit_order(&hs, &errors, scale).map_err(value_err)?)
}

#[pymodule]
fn spectral_vi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyIntegrator>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(fit_geometric, m)?)?;
    m.add_function(wrap_pyfunction!(fit_order, m)?)?;
    m.add("GAUSSIAN_G", GAUSSIAN_G)?;
    Ok(())
}
