//! Python bindings for `skrock`.

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use skrock::harness::{self, McEstimate, McSettings, WeakReference};
use skrock::problems::{self, PopulationParams, ProblemSpec, Reference};
use skrock::{stability, Error, IntegratorConfig, Method, NoiseKind, NoiseStream};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "em" | "euler-maruyama" => Ok(Method::EulerMaruyama),
        "sk-rock" => Ok(Method::SkRock),
        "psk-rock" => Ok(Method::PskRock),
        "s-rock" => Ok(Method::SRock),
        other => Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    }
}

fn parse_noise(name: &str) -> PyResult<NoiseKind> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "gaussian" => Ok(NoiseKind::Gaussian),
        "three-point" => Ok(NoiseKind::ThreePoint),
        other => Err(PyValueError::new_err(format!("unknown noise '{other}'"))),
    }
}

fn config(method: &str, h: f64, s: usize, eta: Option<f64>, adaptive: bool) -> PyResult<IntegratorConfig> {
    let mut cfg = IntegratorConfig::new(parse_method(method)?, h).stages(s);
    cfg.eta = eta;
    Ok(if adaptive { cfg.adaptive() } else { cfg })
}

/// SK-ROCK / PSK-ROCK constants for one `(s, eta)`.
#[pyclass(frozen, module = "skrock_py")]
struct Coefficients(skrock::MethodCoefficients);

#[pymethods]
impl Coefficients {
    #[getter]
    fn s(&self) -> usize {
        self.0.s
    }
    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }
    #[getter]
    fn omega0(&self) -> f64 {
        self.0.omega0
    }
    #[getter]
    fn omega1(&self) -> f64 {
        self.0.omega1
    }
    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.0.mu.clone()
    }
    #[getter]
    fn nu(&self) -> Vec<f64> {
        self.0.nu.clone()
    }
    #[getter]
    fn kappa(&self) -> Vec<f64> {
        self.0.kappa.clone()
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn c_squared(&self) -> f64 {
        self.0.c_squared
    }
    /// Postprocessor amplitude; raises when `c^2 < 0`.
    #[getter]
    fn c(&self) -> PyResult<f64> {
        self.0.c().map_err(to_py)
    }
    fn order_condition_residuals(&self) -> (f64, f64) {
        self.0.order_condition_residuals()
    }
    fn __repr__(&self) -> String {
        format!("Coefficients(s={}, eta={}, c_squared={})", self.0.s, self.0.eta, self.0.c_squared)
    }
}

#[pyfunction]
fn build_coefficients(s: usize, eta: f64) -> PyResult<Coefficients> {
    skrock::build_coefficients(s, eta).map(Coefficients).map_err(to_py)
}

/// Stage count for a given `h * lambda_max`.
#[pyfunction]
#[pyo3(signature = (h_lambda_max, eta=0.05))]
fn stage_selection(h_lambda_max: f64, eta: f64) -> usize {
    skrock::stage_selection(h_lambda_max, eta)
}

/// `(A(p), B(p))`.
#[pyfunction]
fn stab_ab(p: f64, s: usize, eta: f64) -> PyResult<(f64, f64)> {
    stability::stab_ab(p, s, eta).map_err(to_py)
}

/// `E|R(p, q, xi)|^2` of one step of `method` on the linear test.
#[pyfunction]
#[pyo3(signature = (p, q2, s, eta, method="sk-rock"))]
fn ms_amplification(p: f64, q2: f64, s: usize, eta: f64, method: &str) -> PyResult<f64> {
    let poly = stability::StabilityPolynomials::new(s, eta).map_err(to_py)?;
    Ok(poly.amplification(parse_method(method)?, p, q2))
}

#[pyfunction]
#[pyo3(signature = (s, eta, method="sk-rock", tolerance=1e-10))]
fn domain_length(s: usize, eta: f64, method: &str, tolerance: f64) -> PyResult<f64> {
    stability::domain_length_for(parse_method(method)?, s, eta, tolerance).map_err(to_py)
}

/// S-ROCK damping maximizing the domain length, as `(eta, length)`.
#[pyfunction]
#[pyo3(signature = (s, eta_max=None, tolerance=1e-6))]
fn optimize_damping(s: usize, eta_max: Option<f64>, tolerance: f64) -> PyResult<(f64, f64)> {
    let range = match eta_max {
        Some(hi) => (0.0, hi),
        None => stability::default_damping_range(s),
    };
    let o = stability::optimize_damping(s, range, tolerance).map_err(to_py)?;
    Ok((o.eta, o.length))
}

/// A registered test problem.
#[pyclass(frozen, module = "skrock_py")]
struct Problem(ProblemSpec);

#[pymethods]
impl Problem {
    /// One of `lintest`, `pb1`, `population`, `ou`, `double_well`, `heat_spde`.
    #[staticmethod]
    fn by_id(id: &str) -> PyResult<Self> {
        problems::problem_by_id(id).map(Problem).map_err(to_py)
    }
    #[staticmethod]
    fn linear_test(lam: f64, mu: f64) -> PyResult<Self> {
        problems::make_linear_test(lam, mu).map(Problem).map_err(to_py)
    }
    #[staticmethod]
    #[pyo3(signature = (delta=1.0, sigma=std::f64::consts::SQRT_2, d=1))]
    fn ou(delta: f64, sigma: f64, d: usize) -> PyResult<Self> {
        problems::make_ou(delta, sigma, d, None).map(Problem).map_err(to_py)
    }
    #[staticmethod]
    #[pyo3(signature = (stiff=false))]
    fn population(stiff: bool) -> PyResult<Self> {
        let params = if stiff { PopulationParams::stiff() } else { PopulationParams::default() };
        problems::make_population(params).map(Problem).map_err(to_py)
    }
    #[staticmethod]
    #[pyo3(signature = (n=100))]
    fn heat_spde(n: usize) -> PyResult<Self> {
        problems::make_heat_spde(n).map(Problem).map_err(to_py)
    }
    #[getter]
    fn id(&self) -> &'static str {
        self.0.id
    }
    #[getter]
    fn dim(&self) -> usize {
        self.0.problem.dim()
    }
    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.0.x0.clone()
    }
    /// Stationary `E X_i^2`, if known.
    fn stationary_second_moment(&self, i: usize) -> Option<f64> {
        self.0.stationary_second_moment(i)
    }
    fn __repr__(&self) -> String {
        format!("Problem({})", self.0.describe())
    }
}

/// One trajectory on `[0, t]`; returns a dict with the final state, the
/// postprocessed state (or None), `W(t)` and the cost counters.
#[pyfunction]
#[pyo3(signature = (problem, method, h, t, s=1, eta=None, adaptive=false, seed=0, trajectory=0, noise="gaussian", x0=None))]
#[allow(clippy::too_many_arguments)]
fn integrate<'py>(
    py: Python<'py>,
    problem: &Problem,
    method: &str,
    h: f64,
    t: f64,
    s: usize,
    eta: Option<f64>,
    adaptive: bool,
    seed: u64,
    trajectory: u64,
    noise: &str,
    x0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(method, h, s, eta, adaptive)?;
    let mut stream = NoiseStream::new(parse_noise(noise)?, seed, trajectory);
    let x0 = x0.unwrap_or_else(|| problem.0.x0.clone());
    let spec = &problem.0;
    let r = py.detach(|| skrock::integrate(&spec.problem, &cfg, &x0, t, &mut stream)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("state", r.state)?;
    d.set_item("postprocessed", r.postprocessed)?;
    d.set_item("wiener", r.wiener)?;
    d.set_item("steps", r.steps)?;
    d.set_item("f_evals", r.f_evals)?;
    d.set_item("g_evals", r.g_evals)?;
    d.set_item("min_stages", r.min_stages)?;
    d.set_item("max_stages", r.max_stages)?;
    Ok(d)
}

fn estimate_dict<'py>(py: Python<'py>, e: McEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", e.value)?;
    d.set_item("std_error", e.std_error)?;
    d.set_item("estimate", e.estimate)?;
    d.set_item("samples", e.samples)?;
    d.set_item("mean_f_evals", e.mean_f_evals)?;
    d.set_item("diverged", e.diverged)?;
    Ok(d)
}

/// Monte Carlo `E|X(T) - X_N|` against the exact solution.
#[pyfunction]
#[pyo3(signature = (problem, method, h, t, samples=10_000, seed=0, s=1, eta=None, adaptive=false))]
#[allow(clippy::too_many_arguments)]
fn strong_error<'py>(
    py: Python<'py>,
    problem: &Problem,
    method: &str,
    h: f64,
    t: f64,
    samples: usize,
    seed: u64,
    s: usize,
    eta: Option<f64>,
    adaptive: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(method, h, s, eta, adaptive)?;
    let spec = &problem.0;
    let e = py
        .detach(|| harness::strong_error(&spec.problem, &cfg, &spec.x0, t, McSettings::new(samples, seed)))
        .map_err(to_py)?;
    estimate_dict(py, e)
}

/// Monte Carlo weak error of `observable` (`"x"`, `"x2"` or `"arcsinh"`,
/// first coordinate). With `reference=None` the exact solution on the same
/// path is used when available, otherwise an `h/64` run of the same method.
#[pyfunction]
#[pyo3(signature = (problem, method, h, t, observable="x2", reference=None, samples=10_000, seed=0, s=1, eta=None, adaptive=false, noise="gaussian"))]
#[allow(clippy::too_many_arguments)]
fn weak_error<'py>(
    py: Python<'py>,
    problem: &Problem,
    method: &str,
    h: f64,
    t: f64,
    observable: &str,
    reference: Option<f64>,
    samples: usize,
    seed: u64,
    s: usize,
    eta: Option<f64>,
    adaptive: bool,
    noise: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let phi: fn(&[f64]) -> f64 = match observable {
        "x" => |x| x[0],
        "x2" => |x| x[0] * x[0],
        "arcsinh" => |x| x[0].asinh(),
        other => return Err(PyValueError::new_err(format!("unknown observable '{other}'"))),
    };
    let cfg = config(method, h, s, eta, adaptive)?;
    let spec = &problem.0;
    let reference = match (reference, &spec.reference) {
        (Some(v), _) => WeakReference::Value(v),
        (None, Reference::ExactPathwise) => WeakReference::Pathwise,
        (None, _) => WeakReference::FineStep { refine: 64 },
    };
    let settings = McSettings::new(samples, seed).noise(parse_noise(noise)?);
    let e = py
        .detach(|| harness::weak_error(&spec.problem, &cfg, &spec.x0, t, settings, &phi, reference))
        .map_err(to_py)?;
    estimate_dict(py, e)
}

#[pymodule]
fn skrock_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Coefficients>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(build_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(stage_selection, m)?)?;
    m.add_function(wrap_pyfunction!(stab_ab, m)?)?;
    m.add_function(wrap_pyfunction!(ms_amplification, m)?)?;
    m.add_function(wrap_pyfunction!(domain_length, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_damping, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(strong_error, m)?)?;
    m.add_function(wrap_pyfunction!(weak_error, m)?)?;
    Ok(())
}
