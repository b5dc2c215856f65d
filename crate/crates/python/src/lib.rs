//! Python bindings: configuration checks, weights, feedback policy and the
//! oracle suite. Configurations are passed as file paths, like the CLI.

use lifecycle_core::validate::{run_suite as core_run_suite, Suite, SuiteOptions};
use lifecycle_core::weights::{aligned_grids, solve_weights};
use lifecycle_core::{
    validate_hypotheses, FeedbackPolicy, HistoryBuffer, Model, ModelConfig, StateSnapshot,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: lifecycle_core::Error) -> PyErr {
    match e {
        lifecycle_core::Error::NoConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn load(path: &str) -> PyResult<Model> {
    let cfg = ModelConfig::from_path(path).map_err(err)?;
    Model::new(cfg).map_err(err)
}

/// Derived scalars (`kappa`, `beta`, `nu`, `eta`, `eta_hat`, ...) and the
/// hypothesis check for a configuration file.
#[pyfunction]
fn derive<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ModelConfig::from_path(config).map_err(err)?;
    let report = validate_hypotheses(&cfg);
    let model = Model::new(cfg).map_err(err)?;
    let d = &model.derived;
    let out = PyDict::new(py);
    out.set_item("kappa", d.kappa.clone())?;
    out.set_item("beta", d.beta)?;
    out.set_item("nu", d.nu)?;
    out.set_item("eta", d.eta)?;
    out.set_item("eta_hat", d.eta_hat)?;
    out.set_item("hypothesis_holds", report.passed())?;
    Ok(out)
}

/// `t`, `g`, `g1`, `g2` on the time grid with step near `1 / steps_per_year`.
#[pyfunction]
#[pyo3(signature = (config, steps_per_year = 250))]
fn weights<'py>(py: Python<'py>, config: &str, steps_per_year: usize) -> PyResult<Bound<'py, PyDict>> {
    let model = load(config)?;
    let (tg, lg) = aligned_grids(model.tau_r(), model.income().d, steps_per_year).map_err(err)?;
    let tbl = py.detach(|| solve_weights(&model, tg, lg)).map_err(err)?;
    let t: Vec<f64> = (0..=tg.n_t).map(|i| tg.t(i)).collect();
    let (g1, g2): (Vec<f64>, Vec<f64>) = t.iter().map(|&s| tbl.decompose_g(s)).unzip();
    let out = PyDict::new(py);
    out.set_item("t", t)?;
    out.set_item("g", tbl.g_nodes().to_vec())?;
    out.set_item("g1", g1)?;
    out.set_item("g2", g2)?;
    out.set_item("iterations", tbl.stats.iterations)?;
    out.set_item("defect", tbl.stats.defect)?;
    Ok(out)
}

/// Controls and value at `(t, w, y)` with a flat income history at `y`.
#[pyfunction]
#[pyo3(signature = (config, t, w, y, steps_per_year = 250))]
fn policy<'py>(
    py: Python<'py>,
    config: &str,
    t: f64,
    w: f64,
    y: f64,
    steps_per_year: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let model = load(config)?;
    let (tg, lg) = aligned_grids(model.tau_r(), model.income().d, steps_per_year).map_err(err)?;
    let tbl = py.detach(|| solve_weights(&model, tg, lg)).map_err(err)?;
    let pol = FeedbackPolicy::unified(&model, &tbl);
    let state = StateSnapshot::new(t, w, y, HistoryBuffer::flat(lg, y));
    let ctl = pol.feedback_controls(&state).map_err(err)?;
    let v = pol.value_function(&state).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("Gamma", pol.total_wealth(&state).map_err(err)?)?;
    out.set_item("c", ctl.c)?;
    out.set_item("B", ctl.b)?;
    out.set_item("theta", ctl.theta)?;
    out.set_item("V", v.finite().unwrap_or(f64::NEG_INFINITY))?;
    Ok(out)
}

/// Runs an oracle suite (`hjb`, `identities`, `mc`, `all`) and returns one
/// dict per check.
#[pyfunction]
#[pyo3(signature = (config, suite = "hjb", paths = 10_000, steps_per_year = 100, seed = 0))]
fn validate<'py>(
    py: Python<'py>,
    config: &str,
    suite: &str,
    paths: usize,
    steps_per_year: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let model = load(config)?;
    let suite: Suite = suite.parse().map_err(PyValueError::new_err)?;
    let opts = SuiteOptions {
        steps_per_year,
        n_paths: paths,
        seed,
        ..Default::default()
    };
    let reports = py.detach(|| core_run_suite(&model, suite, &opts)).map_err(err)?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", &r.name)?;
            d.set_item("ok", r.ok())?;
            d.set_item("probe", r.probe)?;
            d.set_item("closed_form_value", r.closed_form_value)?;
            d.set_item("mc_estimate", r.mc_estimate)?;
            d.set_item("standard_error", r.standard_error)?;
            d.set_item("z_score", r.z_score)?;
            d.set_item("tolerance", r.tolerance)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn delayed_lifecycle(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(derive, m)?)?;
    m.add_function(wrap_pyfunction!(weights, m)?)?;
    m.add_function(wrap_pyfunction!(policy, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
