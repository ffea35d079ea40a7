//! Python bindings. Matrices cross the boundary as lists of rows (one row per
//! time sample, one column per state component).

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use regpath_core::config::RunConfig;
use regpath_core::error::{Error, ErrorClass};
use regpath_core::experiments;
use regpath_core::model::{CollocationModel, ImplicitModel, ModelDims, ParamMatrix};
use regpath_core::optimizer::PathRecord;
use regpath_core::synth;

create_exception!(regpath, ConfigError, PyValueError);
create_exception!(regpath, SolverError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => ConfigError::new_err(msg),
        ErrorClass::Solver => SolverError::new_err(msg),
        ErrorClass::Io => PyIOError::new_err(msg),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError::new_err(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

type Rows = Vec<Vec<f64>>;

fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn params(dims: &ModelDims, flat: &[f64]) -> PyResult<ParamMatrix> {
    ParamMatrix::from_flat(dims.param_rows, dims.param_cols, flat).map_err(to_py)
}

fn lookup_truth(name: &str) -> PyResult<synth::GroundTruth> {
    synth::ground_truth(name).ok_or_else(|| ConfigError::new_err(format!("unknown ground truth '{name}'")))
}

#[pyclass(name = "RunConfig", module = "regpath", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn paper() -> Self {
        Self {
            inner: RunConfig::paper(),
        }
    }

    #[staticmethod]
    fn ci() -> Self {
        Self { inner: RunConfig::ci() }
    }

    #[staticmethod]
    #[pyo3(signature = (text, unsafe_override = false))]
    fn from_toml(text: &str, unsafe_override: bool) -> PyResult<Self> {
        RunConfig::from_toml_str(text, unsafe_override)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// SHA-256 of the canonical TOML serialization.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[pyo3(signature = (unsafe_override = false))]
    fn validate(&self, unsafe_override: bool) -> PyResult<()> {
        self.inner.validate(unsafe_override).map_err(to_py)
    }

    #[getter]
    fn profile(&self) -> String {
        self.inner.profile.to_string()
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.noise.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, seed: u64) {
        self.inner.noise.master_seed = seed;
    }

    #[getter]
    fn sigmas(&self) -> Vec<f64> {
        self.inner.noise.sigmas.clone()
    }

    #[setter]
    fn set_sigmas(&mut self, sigmas: Vec<f64>) {
        self.inner.noise.sigmas = sigmas;
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.noise.trials
    }

    #[setter]
    fn set_trials(&mut self, trials: usize) {
        self.inner.noise.trials = trials;
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.schedule.levels
    }

    /// Sample times of the configured grid.
    fn times(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.build_grid().map_err(to_py)?.points().to_vec())
    }

    /// Weights `alpha_0 > alpha_1 > ...` of the homotopy schedule.
    fn alphas(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.build_schedule().map_err(to_py)?.alphas().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(profile={}, hash={})",
            self.inner.profile,
            &self.inner.hash()[..12]
        )
    }
}

/// Collocation residual `F(u, m)` of a configuration.
#[pyclass(name = "Model", module = "regpath")]
struct PyModel {
    inner: CollocationModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: &PyRunConfig) -> PyResult<Self> {
        Ok(Self {
            inner: config.inner.build_model().map_err(to_py)?,
        })
    }

    /// `(T, U, param_rows, param_cols)`.
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.inner.dims();
        (d.times, d.components, d.param_rows, d.param_cols)
    }

    fn residual(&self, u: Vec<Vec<f64>>, m: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let u = matrix_from_rows(&u, "u")?;
        let m = params(&self.inner.dims(), &m)?;
        Ok(rows_from_matrix(&self.inner.residual(&u, &m).map_err(to_py)?))
    }

    /// Dense state Jacobian over the component-major flattened state.
    fn jac_u(&self, u: Vec<Vec<f64>>, m: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let u = matrix_from_rows(&u, "u")?;
        let m = params(&self.inner.dims(), &m)?;
        Ok(rows_from_matrix(&self.inner.jac_u(&u, &m).map_err(to_py)?))
    }

    fn jac_m_transpose_apply(&self, u: Vec<Vec<f64>>, m: Vec<f64>, lam: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let u = matrix_from_rows(&u, "u")?;
        let lam = matrix_from_rows(&lam, "lambda")?;
        let m = params(&self.inner.dims(), &m)?;
        Ok(self.inner.jac_m_transpose_apply(&u, &m, &lam).map_err(to_py)?.flatten())
    }
}

/// One level of a regularization path.
#[pyclass(name = "PathLevel", module = "regpath", get_all)]
struct PyPathLevel {
    level: usize,
    alpha: f64,
    data_loss: f64,
    reg_value: f64,
    objective: f64,
    inner_iters: usize,
    m: Vec<f64>,
    u: Vec<Vec<f64>>,
}

impl From<&PathRecord> for PyPathLevel {
    fn from(r: &PathRecord) -> Self {
        Self {
            level: r.level,
            alpha: r.alpha,
            data_loss: r.data_loss,
            reg_value: r.reg_value,
            objective: r.objective,
            inner_iters: r.inner_iterations,
            m: r.m.flatten(),
            u: rows_from_matrix(&r.u),
        }
    }
}

#[pymethods]
impl PyPathLevel {
    fn __repr__(&self) -> String {
        format!(
            "PathLevel(level={}, alpha={:.3e}, data_loss={:.4e})",
            self.level, self.alpha, self.data_loss
        )
    }
}

/// Aggregated errors of one (truth, sigma) cell.
#[pyclass(name = "TableRow", module = "regpath", get_all)]
struct PyTableRow {
    truth: String,
    sigma: f64,
    mean_m: f64,
    std_m: f64,
    mean_u: f64,
    std_u: f64,
    n: usize,
    failed: usize,
}

#[pymethods]
impl PyTableRow {
    fn __repr__(&self) -> String {
        format!(
            "TableRow({} sigma={} m={:.4}±{:.4} u={:.4}±{:.4} n={})",
            self.truth, self.sigma, self.mean_m, self.std_m, self.mean_u, self.std_u, self.n
        )
    }
}

/// Ground-truth coefficient vectors by name.
#[pyfunction]
fn ground_truths() -> Vec<(String, Vec<f64>)> {
    synth::ground_truths().into_iter().map(|g| (g.name, g.coeffs)).collect()
}

/// Noiseless trajectory of a ground truth on the configured grid.
#[pyfunction]
fn clean_trajectory(config: &PyRunConfig, truth: &str) -> PyResult<Vec<Vec<f64>>> {
    let u = experiments::clean_trajectory(&config.inner, truth).map_err(to_py)?;
    Ok(rows_from_matrix(u.values()))
}

/// `(times, clean, noisy)` for one seeded trial.
#[pyfunction]
fn make_fixture(
    config: &PyRunConfig,
    truth: &str,
    sigma_index: usize,
    trial: usize,
) -> PyResult<(Vec<f64>, Rows, Rows)> {
    let clean = experiments::clean_trajectory(&config.inner, truth).map_err(to_py)?;
    let fx = experiments::make_fixture(&config.inner, &clean, truth, sigma_index, trial).map_err(to_py)?;
    Ok((fx.times, rows_from_matrix(&fx.clean), rows_from_matrix(&fx.data)))
}

/// Full homotopy path on data `d` (rows = time samples).
#[pyfunction]
fn solve_path(py: Python<'_>, config: &PyRunConfig, data: Vec<Vec<f64>>) -> PyResult<Vec<PyPathLevel>> {
    let d = matrix_from_rows(&data, "data")?;
    let cfg = config.inner.clone();
    let path = py.detach(move || experiments::solve_path(&cfg, &d)).map_err(to_py)?;
    Ok(path.iter().map(PyPathLevel::from).collect())
}

#[pyfunction]
fn relative_error(estimate: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    experiments::relative_error(&estimate, &truth).map_err(to_py)
}

/// `(level, alpha, rel_err, m)` of the level closest to the named truth.
#[pyfunction]
fn best_alpha(path: Vec<PyRef<'_, PyPathLevel>>, truth: &str) -> PyResult<(usize, f64, f64, Vec<f64>)> {
    let gt = lookup_truth(truth)?;
    let errs = path
        .iter()
        .map(|p| experiments::relative_error(&p.m, &gt.coeffs))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let i = experiments::argmin_first(&errs).ok_or_else(|| ConfigError::new_err("empty or non-finite path"))?;
    Ok((path[i].level, path[i].alpha, errs[i], path[i].m.clone()))
}

/// Per-level parameter errors and whether they dip below both endpoints.
#[pyfunction]
fn semi_convergence(path: Vec<PyRef<'_, PyPathLevel>>, truth: &str) -> PyResult<(Vec<f64>, bool, bool)> {
    let gt = lookup_truth(truth)?;
    let rows: Vec<regpath_core::io::PathRow> = path
        .iter()
        .map(|p| regpath_core::io::PathRow {
            level: p.level,
            alpha: p.alpha,
            data_loss: p.data_loss,
            reg_value: p.reg_value,
            inner_iters: p.inner_iters,
            m: p.m.clone(),
        })
        .collect();
    let rep = experiments::semi_convergence_report(&rows, &gt.coeffs).map_err(to_py)?;
    Ok((rep.error_curve, rep.interior_minimum, rep.terminal_non_increasing))
}

/// All trials of the configuration; returns the aligned text table and rows.
#[pyfunction]
#[pyo3(signature = (config, workers = 1))]
fn run_table(py: Python<'_>, config: &PyRunConfig, workers: usize) -> PyResult<(String, Vec<PyTableRow>)> {
    let cfg = config.inner.clone();
    let run = py.detach(|| experiments::run_table(&cfg, workers)).map_err(to_py)?;
    let rows = run
        .rows
        .iter()
        .map(|r| PyTableRow {
            truth: r.truth.clone(),
            sigma: r.sigma,
            mean_m: r.mean_m,
            std_m: r.std_m,
            mean_u: r.mean_u,
            std_u: r.std_u,
            n: r.n,
            failed: r.failed,
        })
        .collect();
    Ok((experiments::table_text(&cfg, &run.rows), rows))
}

#[pymodule]
fn regpath(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPathLevel>()?;
    m.add_class::<PyTableRow>()?;
    m.add_function(wrap_pyfunction!(ground_truths, m)?)?;
    m.add_function(wrap_pyfunction!(clean_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(make_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(solve_path, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(best_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(semi_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(run_table, m)?)?;
    Ok(())
}
