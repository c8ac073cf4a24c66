//! Python bindings: model parameters, forcing, simulation and d_c inversion.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rsf_core::inversion::{
    self as inv, FitSettings, ForwardModel, GridSettings, GridSpacing, InversionError, McmcSettings, NoiseMode,
    NoiseModel, ObservationSet, PosteriorSummary, PriorConfig,
};
use rsf_core::ode_solver::{self, Method, SolverError};
use rsf_core::rsf_model::{self as model, ModelError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    value_err(e)
}

fn solver_err(e: SolverError) -> PyErr {
    match e {
        SolverError::InvalidConfig(_) => value_err(e),
        _ => runtime_err(e),
    }
}

fn inversion_err(e: InversionError) -> PyErr {
    match e {
        InversionError::InvalidObservations(_)
        | InversionError::InvalidPrior { .. }
        | InversionError::InvalidSettings(_) => value_err(e),
        _ => runtime_err(e),
    }
}

/// Friction-law constants; lengths in μm, times in s.
#[pyclass(name = "RsfParams", module = "rsf_py")]
struct Params {
    inner: model::RsfParams,
}

#[pymethods]
impl Params {
    #[new]
    #[pyo3(signature = (mu0=0.6, v0=1.0, a_coef=0.011, b_coef=0.014, d_c=20.0, k_prime=1e-2, k_dprime=1e-7))]
    fn new(mu0: f64, v0: f64, a_coef: f64, b_coef: f64, d_c: f64, k_prime: f64, k_dprime: f64) -> PyResult<Self> {
        let inner = model::RsfParams {
            mu0,
            v0,
            a_coef,
            b_coef,
            d_c,
            k_prime,
            k_dprime,
        };
        inner.validate().map_err(model_err)?;
        Ok(Self { inner })
    }

    /// Stiffness and damping from E (Pa), l (m), normal stress (Pa), η (Pa·s/m).
    #[staticmethod]
    #[pyo3(signature = (elastic_modulus=5e10, fault_length=3e-2, normal_stress=2e8, damping_coef=2e7))]
    fn from_physical(elastic_modulus: f64, fault_length: f64, normal_stress: f64, damping_coef: f64) -> PyResult<Self> {
        let c = model::PhysicalConstants {
            elastic_modulus,
            fault_length,
            normal_stress,
            damping_coef,
        };
        c.validate().map_err(model_err)?;
        Ok(Self {
            inner: c.apply_to(model::RsfParams::default()),
        })
    }

    #[getter]
    fn mu0(&self) -> f64 {
        self.inner.mu0
    }
    #[getter]
    fn v0(&self) -> f64 {
        self.inner.v0
    }
    #[getter]
    fn a_coef(&self) -> f64 {
        self.inner.a_coef
    }
    #[getter]
    fn b_coef(&self) -> f64 {
        self.inner.b_coef
    }
    #[getter]
    fn d_c(&self) -> f64 {
        self.inner.d_c
    }
    #[getter]
    fn k_prime(&self) -> f64 {
        self.inner.k_prime
    }
    #[getter]
    fn k_dprime(&self) -> f64 {
        self.inner.k_dprime
    }

    fn with_d_c(&self, d_c: f64) -> PyResult<Self> {
        let inner = self.inner.with_d_c(d_c);
        inner.validate().map_err(model_err)?;
        Ok(Self { inner })
    }

    /// (mu, theta, v, a) at steady sliding.
    fn steady_state(&self) -> (f64, f64, f64, f64) {
        let s = self.inner.steady_state();
        (s.mu, s.theta, s.v, s.a)
    }

    fn friction(&self, v: f64, theta: f64) -> f64 {
        self.inner.friction(v, theta)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Load-point velocity history.
#[pyclass(name = "Forcing", module = "rsf_py")]
struct PyForcing {
    inner: model::Forcing,
}

#[pymethods]
impl PyForcing {
    /// `baseline + amplitude·exp(−t/decay_time)·sin(t/oscillation_time)`.
    #[staticmethod]
    #[pyo3(signature = (baseline=1.0, amplitude=1.0, decay_time=20.0, oscillation_time=0.1))]
    fn decaying_sinusoid(baseline: f64, amplitude: f64, decay_time: f64, oscillation_time: f64) -> PyResult<Self> {
        Self::checked(model::Forcing::DecayingSinusoid {
            baseline,
            amplitude,
            decay_time,
            oscillation_time,
        })
    }

    #[staticmethod]
    fn step(v_before: f64, v_after: f64, step_time: f64) -> PyResult<Self> {
        Self::checked(model::Forcing::Step {
            v_before,
            v_after,
            step_time,
        })
    }

    #[staticmethod]
    fn constant(v: f64) -> PyResult<Self> {
        Self::checked(model::Forcing::constant(v))
    }

    /// (V_l, dV_l/dt) at `t`.
    fn load_point(&self, t: f64) -> (f64, f64) {
        self.inner.load_point(t)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

impl PyForcing {
    fn checked(inner: model::Forcing) -> PyResult<Self> {
        inner.validate().map_err(model_err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "SolverConfig", module = "rsf_py")]
struct Solver {
    inner: ode_solver::SolverConfig,
}

#[pymethods]
impl Solver {
    #[new]
    #[pyo3(signature = (t_start=0.0, t_end=50.0, output_dt=1e-2, abs_tol=1e-10, rel_tol=1e-6, max_step=1e-3, method="adaptive"))]
    fn new(
        t_start: f64,
        t_end: f64,
        output_dt: f64,
        abs_tol: f64,
        rel_tol: f64,
        max_step: f64,
        method: &str,
    ) -> PyResult<Self> {
        let method = match method {
            "adaptive" => Method::Adaptive,
            "fixed_rk4" | "rk4" => Method::FixedRk4,
            other => return Err(value_err(format!("unknown method '{other}'"))),
        };
        let inner = ode_solver::SolverConfig {
            t_start,
            t_end,
            output_dt,
            abs_tol,
            rel_tol,
            max_step,
            method,
            ..Default::default()
        };
        inner.validate().map_err(solver_err)?;
        Ok(Self { inner })
    }

    fn output_times(&self) -> Vec<f64> {
        self.inner.output_times()
    }
}

#[pyclass(name = "Trajectory", module = "rsf_py")]
struct Traj {
    inner: ode_solver::Trajectory,
}

#[pymethods]
impl Traj {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }
    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.friction()
    }
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.column(|s| s.theta)
    }
    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.column(|s| s.v)
    }
    #[getter]
    fn a(&self) -> Vec<f64> {
        self.inner.accelerations()
    }

    /// steps, rejected steps and right-hand-side evaluations.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("steps", self.inner.stats.steps)?;
        d.set_item("rejected", self.inner.stats.rejected)?;
        d.set_item("rhs_evals", self.inner.stats.rhs_evals)?;
        Ok(d)
    }

    /// States interpolated at `times` as (mu, theta, v, a) tuples.
    fn sample_at(&self, times: Vec<f64>) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let states = ode_solver::sample_at(&self.inner, &times).map_err(solver_err)?;
        Ok(states.iter().map(|s| (s.mu, s.theta, s.v, s.a)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn resolve(
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> (model::RsfParams, model::Forcing, ode_solver::SolverConfig) {
    (
        params.map(|p| p.inner).unwrap_or_default(),
        forcing.map(|f| f.inner).unwrap_or_default(),
        solver.map(|s| s.inner).unwrap_or_default(),
    )
}

fn forward_model(
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> ForwardModel {
    let (params, forcing, solver) = resolve(params, forcing, solver);
    ForwardModel {
        params,
        forcing,
        solver,
        initial: Default::default(),
    }
}

/// Slip rate (μm/s) from friction and state.
#[pyfunction]
#[pyo3(signature = (mu, theta, params=None))]
fn slip_rate(mu: f64, theta: f64, params: Option<PyRef<'_, Params>>) -> PyResult<f64> {
    let p = params.map(|p| p.inner).unwrap_or_default();
    model::slip_rate(mu, theta, &p).map_err(model_err)
}

#[pyfunction]
#[pyo3(signature = (v, params=None))]
fn steady_state_friction(v: f64, params: Option<PyRef<'_, Params>>) -> f64 {
    model::steady_state_friction(v, &params.map(|p| p.inner).unwrap_or_default())
}

/// Integrate from steady sliding; `d_c` overrides the parameter value.
#[pyfunction]
#[pyo3(signature = (params=None, forcing=None, solver=None, d_c=None))]
fn simulate(
    py: Python<'_>,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
    d_c: Option<f64>,
) -> PyResult<Traj> {
    let (mut p, f, cfg) = resolve(params, forcing, solver);
    if let Some(d) = d_c {
        p = p.with_d_c(d);
    }
    p.validate().map_err(model_err)?;
    let traj = py
        .detach(|| ode_solver::integrate(&p, &f, p.steady_state(), &cfg))
        .map_err(solver_err)?;
    Ok(Traj { inner: traj })
}

/// Fixed-step classical RK4 from steady sliding.
#[pyfunction]
#[pyo3(signature = (dt, t_end=50.0, output_dt=1e-2, params=None, forcing=None))]
fn simulate_rk4(
    py: Python<'_>,
    dt: f64,
    t_end: f64,
    output_dt: f64,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
) -> PyResult<Traj> {
    let (p, f, _) = resolve(params, forcing, None);
    let traj = py
        .detach(|| ode_solver::integrate_fixed_rk4(&p, &f, p.steady_state(), dt, (0.0, t_end), output_dt))
        .map_err(solver_err)?;
    Ok(Traj { inner: traj })
}

/// Modelled acceleration (μm/s²) at `times` for a given `d_c`.
#[pyfunction]
#[pyo3(signature = (d_c, times, params=None, forcing=None, solver=None))]
fn forward_response(
    py: Python<'_>,
    d_c: f64,
    times: Vec<f64>,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> PyResult<Vec<f64>> {
    let m = forward_model(params, forcing, solver);
    py.detach(|| m.response(d_c, &times)).map_err(inversion_err)
}

/// Forward response plus seeded Gaussian noise.
#[pyfunction]
#[pyo3(signature = (d_c_true, times, sigma_noise, seed, params=None, forcing=None, solver=None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    py: Python<'_>,
    d_c_true: f64,
    times: Vec<f64>,
    sigma_noise: f64,
    seed: u64,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> PyResult<Vec<f64>> {
    let m = forward_model(params, forcing, solver);
    let ts = py
        .detach(|| rsf_core::data_io::generate_synthetic(d_c_true, &m, &times, sigma_noise, seed))
        .map_err(value_err)?;
    Ok(ts.values)
}

#[pyfunction]
fn log_likelihood_from_sse(sse: f64, n: usize, sigma_noise: f64) -> f64 {
    inv::log_likelihood_from_sse(sse, n, sigma_noise)
}

fn observations(times: Vec<f64>, accels: Vec<f64>) -> PyResult<ObservationSet> {
    ObservationSet::new(times, accels).map_err(inversion_err)
}

fn prior(lower: f64, upper: f64) -> PyResult<PriorConfig> {
    PriorConfig::new(lower, upper).map_err(inversion_err)
}

fn spacing(s: &str) -> PyResult<GridSpacing> {
    match s {
        "log" => Ok(GridSpacing::Log),
        "lin" | "linear" => Ok(GridSpacing::Linear),
        other => Err(value_err(format!("unknown spacing '{other}'"))),
    }
}

fn noise(sigma_noise: Option<f64>) -> NoiseModel {
    match sigma_noise {
        Some(s) => NoiseModel::fixed(s),
        None => NoiseModel {
            sigma_noise: f64::NAN,
            mode: NoiseMode::Estimated,
        },
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &PosteriorSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("mode", s.mode)?;
    d.set_item("std", s.std)?;
    d.set_item("level", s.level)?;
    d.set_item("credible_interval", s.credible_interval)?;
    d.set_item("ess", s.ess)?;
    d.set_item("mcse", s.mcse)?;
    Ok(d)
}

/// Bounded least-squares estimate of d_c.
#[pyfunction]
#[pyo3(signature = (times, accels, lower=5.0, upper=50.0, params=None, forcing=None, solver=None))]
#[allow(clippy::too_many_arguments)]
fn least_squares_fit<'py>(
    py: Python<'py>,
    times: Vec<f64>,
    accels: Vec<f64>,
    lower: f64,
    upper: f64,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> PyResult<Bound<'py, PyDict>> {
    let obs = observations(times, accels)?;
    let bounds = prior(lower, upper)?;
    let m = forward_model(params, forcing, solver);
    let fit = py
        .detach(|| inv::least_squares_fit(&obs, &bounds, &m, &FitSettings::default()))
        .map_err(inversion_err)?;
    let d = PyDict::new(py);
    d.set_item("d_c_hat", fit.d_c_hat)?;
    d.set_item("sse", fit.sse)?;
    d.set_item("bracket", fit.bracket)?;
    d.set_item("boundary_flag", fit.boundary_flag)?;
    d.set_item("degenerate", fit.degenerate)?;
    d.set_item("multimodal", fit.multimodal)?;
    Ok(d)
}

#[pyclass(name = "PosteriorGrid", module = "rsf_py")]
struct Posterior {
    inner: inv::PosteriorGrid,
}

#[pymethods]
impl Posterior {
    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid.clone()
    }
    #[getter]
    fn density(&self) -> Vec<f64> {
        self.inner.normalized_density.clone()
    }
    #[getter]
    fn log_likelihoods(&self) -> Vec<f64> {
        self.inner.log_likelihoods.clone()
    }
    #[getter]
    fn log_evidence(&self) -> f64 {
        self.inner.log_evidence
    }
    #[getter]
    fn sigma_noise(&self) -> f64 {
        self.inner.sigma_noise
    }

    #[pyo3(signature = (level=0.95))]
    fn summary<'py>(&self, py: Python<'py>, level: f64) -> PyResult<Bound<'py, PyDict>> {
        summary_dict(py, &self.inner.summary(level))
    }

    fn integral(&self) -> f64 {
        inv::trapezoid(&self.inner.grid, &self.inner.normalized_density)
    }
}

/// Grid posterior of d_c under a uniform prior; `sigma_noise=None`
/// estimates σ at the least-squares fit.
#[pyfunction]
#[pyo3(signature = (times, accels, lower=5.0, upper=50.0, n_grid=200, sigma_noise=None, spacing="log", params=None, forcing=None, solver=None))]
#[allow(clippy::too_many_arguments)]
fn grid_posterior(
    py: Python<'_>,
    times: Vec<f64>,
    accels: Vec<f64>,
    lower: f64,
    upper: f64,
    n_grid: usize,
    sigma_noise: Option<f64>,
    spacing: &str,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> PyResult<Posterior> {
    let obs = observations(times, accels)?;
    let pr = prior(lower, upper)?;
    let settings = GridSettings {
        n_grid,
        spacing: self::spacing(spacing)?,
    };
    let m = forward_model(params, forcing, solver);
    let nm = noise(sigma_noise);
    let post = py
        .detach(|| inv::grid_posterior(&obs, pr, &settings, &nm, &m))
        .map_err(inversion_err)?;
    Ok(Posterior { inner: post })
}

/// Random-walk Metropolis over d_c. Returns samples (after thinning,
/// burn-in included), the burn-in length, acceptance rate and summary.
#[pyfunction]
#[pyo3(signature = (times, accels, n_samples, seed, lower=5.0, upper=50.0, sigma_noise=None, proposal_std=None, burn_in=None, initial=None, params=None, forcing=None, solver=None))]
#[allow(clippy::too_many_arguments)]
fn mcmc<'py>(
    py: Python<'py>,
    times: Vec<f64>,
    accels: Vec<f64>,
    n_samples: usize,
    seed: u64,
    lower: f64,
    upper: f64,
    sigma_noise: Option<f64>,
    proposal_std: Option<f64>,
    burn_in: Option<usize>,
    initial: Option<f64>,
    params: Option<PyRef<'_, Params>>,
    forcing: Option<PyRef<'_, PyForcing>>,
    solver: Option<PyRef<'_, Solver>>,
) -> PyResult<Bound<'py, PyDict>> {
    let obs = observations(times, accels)?;
    let pr = prior(lower, upper)?;
    let m = forward_model(params, forcing, solver);
    let mut settings = McmcSettings::defaults_for(&pr, n_samples, seed);
    if let Some(s) = proposal_std {
        settings.proposal_std = s;
    }
    if let Some(b) = burn_in {
        settings.burn_in = b;
    }
    settings.initial = initial;
    let nm = noise(sigma_noise);
    let (chain, sigma) = py
        .detach(|| -> Result<_, InversionError> {
            let reference = match (initial, nm.mode) {
                (_, NoiseMode::Fixed) => 0.5 * (pr.lower + pr.upper),
                (Some(x), _) => x,
                (None, _) => inv::least_squares_fit(&obs, &pr, &m, &FitSettings::default())?.d_c_hat,
            };
            let sigma = inv::resolve_noise(&obs, &nm, reference, &m)?;
            let n = obs.len();
            let chain = inv::metropolis(
                |d| Ok(inv::log_likelihood_from_sse(inv::sse(&obs, d, &m)?, n, sigma)),
                &pr,
                &settings,
            )?;
            Ok((chain, sigma))
        })
        .map_err(inversion_err)?;
    let d = PyDict::new(py);
    d.set_item("samples", chain.samples.clone())?;
    d.set_item("log_posts", chain.log_posts.clone())?;
    d.set_item("burn_in", chain.burn_in)?;
    d.set_item("acceptance_rate", chain.acceptance_rate)?;
    d.set_item("acceptance_warning", chain.acceptance_warning)?;
    d.set_item("seed", chain.seed)?;
    d.set_item("sigma_noise", sigma)?;
    d.set_item(
        "summary",
        summary_dict(py, &chain.summary(0.95).map_err(inversion_err)?)?,
    )?;
    Ok(d)
}

#[pymodule]
fn rsf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Params>()?;
    m.add_class::<PyForcing>()?;
    m.add_class::<Solver>()?;
    m.add_class::<Traj>()?;
    m.add_class::<Posterior>()?;
    m.add_function(wrap_pyfunction!(slip_rate, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state_friction, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_rk4, m)?)?;
    m.add_function(wrap_pyfunction!(forward_response, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood_from_sse, m)?)?;
    m.add_function(wrap_pyfunction!(least_squares_fit, m)?)?;
    m.add_function(wrap_pyfunction!(grid_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(mcmc, m)?)?;
    Ok(())
}
