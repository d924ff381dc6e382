//! Python bindings for quantiled conditional moments.
//!
//! Configuration problems raise `ValueError`; failures of the estimation
//! itself raise `qcm.EstimationError`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use qcm_core::caviar::{self, CaviarSpec, EstimateOptions, Family};
use qcm_core::cf::{self, CfRegression};
use qcm_core::dgp::{DgpKind, SimTruth};
use qcm_core::dq;
use qcm_core::io::{self as qio, InputMode};
use qcm_core::nic;
use qcm_core::pipeline::{self, ConstraintPolicy, PipelineConfig};
use qcm_core::rng::job_rng;
use qcm_core::{normal, QcmError};

create_exception!(qcm, EstimationError, PyException);

fn to_py(e: QcmError) -> PyErr {
    if e.is_estimation_failure() {
        EstimationError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = QcmError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Moments of one pooled cross-section of quantiles.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Moments {
    pub h: f64,
    pub s: f64,
    pub k: f64,
    pub constraint_ok: bool,
    pub beta: (f64, f64, f64, f64),
}

#[pymethods]
impl Moments {
    fn __repr__(&self) -> String {
        format!(
            "Moments(h={}, s={}, k={}, constraint_ok={})",
            self.h, self.s, self.k, self.constraint_ok
        )
    }
}

/// A QCM series with per-timepoint diagnostics.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct QcmSeries {
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
    pub constraint_ok: Vec<bool>,
    pub n0: usize,
    pub n_constraint_violations: usize,
    pub n_degenerate: usize,
}

#[pymethods]
impl QcmSeries {
    fn __len__(&self) -> usize {
        self.h.len()
    }

    fn __repr__(&self) -> String {
        format!("QcmSeries(len={}, n0={})", self.h.len(), self.n0)
    }
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct CaviarFit {
    pub family: String,
    pub alpha: f64,
    pub psi: Vec<f64>,
    pub loss: f64,
    pub hit_rate: f64,
    pub q_path: Vec<f64>,
}

#[pymethods]
impl CaviarFit {
    fn __repr__(&self) -> String {
        format!(
            "CaviarFit(family={}, alpha={}, hit_rate={:.4})",
            self.family, self.alpha, self.hit_rate
        )
    }
}

/// A simulated series with its true conditional moments.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Simulation {
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct NicResult {
    pub moment: String,
    pub theta: f64,
    pub grid: Vec<f64>,
    pub g: Vec<f64>,
    pub bandwidths: (f64, f64, f64),
    /// `(form, theta, adjusted R²)` per parametric form.
    pub parametric: Vec<(String, f64, f64)>,
}

/// `Φ⁻¹(p)`.
#[pyfunction]
fn normal_quantile(p: f64) -> PyResult<f64> {
    normal::quantile(p).map_err(to_py)
}

/// Cornish-Fisher regression of one pool of quantiles.
#[pyfunction]
#[pyo3(signature = (levels, values, constraint = "check"))]
fn moments_from_quantiles(levels: Vec<f64>, values: Vec<f64>, constraint: &str) -> PyResult<Moments> {
    let policy: ConstraintPolicy = parse(constraint)?;
    let reg = CfRegression::new(&levels).map_err(to_py)?;
    if values.len() != levels.len() {
        return Err(PyValueError::new_err("levels and values differ in length"));
    }
    let (theta, triple, _) = pipeline::fit_timepoint(&reg, &values, policy).map_err(to_py)?;
    let m = triple.ok_or_else(|| {
        to_py(QcmError::DegenerateScale {
            beta1: theta.beta1,
            threshold: cf::epsilon_beta(&values),
        })
    })?;
    Ok(Moments {
        h: m.h,
        s: m.s,
        k: m.k,
        constraint_ok: m.constraint_ok,
        beta: (theta.beta0, theta.beta1, theta.beta2, theta.beta3),
    })
}

/// Full pipeline: CAViaR fits, DQ screening, per-timepoint CF regression.
#[pyfunction]
#[pyo3(signature = (y, grid = None, families = None, p_star = 0.1, constraint = "check", seed = 0, n_random = 10_000))]
#[allow(clippy::too_many_arguments)]
fn compute(
    py: Python<'_>,
    y: Vec<f64>,
    grid: Option<Vec<f64>>,
    families: Option<Vec<String>>,
    p_star: f64,
    constraint: &str,
    seed: u64,
    n_random: usize,
) -> PyResult<QcmSeries> {
    let mut cfg = PipelineConfig {
        p_star,
        constraint_policy: parse(constraint)?,
        seed,
        estimate: EstimateOptions {
            n_random,
            ..EstimateOptions::default()
        },
        ..PipelineConfig::default()
    };
    if let Some(g) = grid {
        cfg.grid = g;
    }
    if let Some(f) = families {
        cfg.families = f.iter().map(|s| parse::<Family>(s)).collect::<PyResult<_>>()?;
    }
    cfg.validate().map_err(to_py)?;
    let (series, report) = py.detach(|| pipeline::run(&y, &cfg)).map_err(to_py)?;
    Ok(QcmSeries {
        h: series.h(),
        s: series.s(),
        k: series.k(),
        constraint_ok: series.records.iter().map(|r| r.constraint_ok).collect(),
        n0: report.n0,
        n_constraint_violations: report.n_constraint_violations,
        n_degenerate: report.n_degenerate,
    })
}

/// Fits one CAViaR model by multi-start check-loss minimization.
#[pyfunction]
#[pyo3(signature = (family, alpha, y, seed = 0, n_random = 10_000))]
fn fit_caviar(py: Python<'_>, family: &str, alpha: f64, y: Vec<f64>, seed: u64, n_random: usize) -> PyResult<CaviarFit> {
    let spec = CaviarSpec::new(parse(family)?, alpha).map_err(to_py)?;
    let opts = EstimateOptions {
        n_random,
        ..EstimateOptions::default()
    };
    let mut rng = job_rng(seed, &[0]);
    let fit = py.detach(|| caviar::estimate(&spec, &y, &opts, &mut rng)).map_err(to_py)?;
    Ok(CaviarFit {
        family: spec.family.name().to_string(),
        alpha,
        psi: fit.psi,
        loss: fit.loss,
        hit_rate: fit.hit_rate,
        q_path: fit.q_path,
    })
}

/// In-sample DQ test of a quantile path: `(statistic, p-value)`.
#[pyfunction]
fn dq_test(y: Vec<f64>, q_path: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    let h = dq::hits(&y, &q_path, alpha).map_err(to_py)?;
    let r = dq::dq_insample(&h).map_err(to_py)?;
    Ok((r.statistic, r.pvalue))
}

/// Simulates `garch-normal`, `garch-t` or `arma-mn-garch`.
#[pyfunction]
#[pyo3(signature = (dgp, length, seed = 0))]
fn simulate(dgp: &str, length: usize, seed: u64) -> PyResult<Simulation> {
    let kind: DgpKind = parse(dgp)?;
    let mut rng = job_rng(seed, &[0]);
    let t = SimTruth::simulate(kind, length, &mut rng).map_err(to_py)?;
    Ok(Simulation {
        y: t.y().to_vec(),
        mu: t.mu(),
        h: t.h(),
        s: t.s(),
        k: t.k(),
    })
}

/// Dated percent log-returns from a CSV file; `mode` is `prices` or `returns`.
#[pyfunction]
#[pyo3(signature = (path, mode = "prices"))]
fn load_returns(path: &str, mode: &str) -> PyResult<(Vec<String>, Vec<f64>)> {
    let mode: InputMode = parse(mode)?;
    let r = qio::load_returns(std::path::Path::new(path), mode).map_err(to_py)?;
    Ok((r.dates, r.values))
}

/// News impact curves of `h`, `s`, `k` after a TAR(`order`) mean fit.
#[pyfunction]
#[pyo3(signature = (y, h, s, k, order, prune = true))]
fn nic_study(
    py: Python<'_>,
    y: Vec<f64>,
    h: Vec<f64>,
    s: Vec<f64>,
    k: Vec<f64>,
    order: usize,
    prune: bool,
) -> PyResult<Vec<NicResult>> {
    let study = py.detach(|| nic::nic_study(&y, &h, &s, &k, order, prune)).map_err(to_py)?;
    Ok(study
        .moments
        .iter()
        .map(|m| NicResult {
            moment: m.moment.name().to_string(),
            theta: m.estimate.theta,
            grid: m.estimate.curve.grid.clone(),
            g: m.estimate.curve.values.clone(),
            bandwidths: (m.estimate.bandwidths[0], m.estimate.bandwidths[1], m.estimate.bandwidths[2]),
            parametric: m
                .parametric
                .iter()
                .map(|p| (p.form.name().to_string(), p.theta, p.adj_r2))
                .collect(),
        })
        .collect())
}

#[pymodule]
fn qcm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EstimationError", m.py().get_type::<EstimationError>())?;
    m.add_class::<Moments>()?;
    m.add_class::<QcmSeries>()?;
    m.add_class::<CaviarFit>()?;
    m.add_class::<Simulation>()?;
    m.add_class::<NicResult>()?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(moments_from_quantiles, m)?)?;
    m.add_function(wrap_pyfunction!(compute, m)?)?;
    m.add_function(wrap_pyfunction!(fit_caviar, m)?)?;
    m.add_function(wrap_pyfunction!(dq_test, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(load_returns, m)?)?;
    m.add_function(wrap_pyfunction!(nic_study, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_exact_normal_quantiles() {
        let levels: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        let values: Vec<f64> = levels.iter().map(|&a| 1.0 + 2.0 * normal::quantile(a).unwrap()).collect();
        let m = moments_from_quantiles(levels, values, "check").unwrap();
        assert!((m.h - 4.0).abs() < 1e-9);
        assert!(m.s.abs() < 1e-9);
        assert!((m.k - 3.0).abs() < 1e-9);
        assert!(m.constraint_ok);
    }

    #[test]
    fn error_kinds_map_to_exceptions() {
        Python::initialize();
        Python::attach(|py| {
            let e = to_py(QcmError::Config("x".into()));
            assert!(e.is_instance_of::<PyValueError>(py));
            let e = to_py(QcmError::InsufficientPool { n0: 1, required: 5 });
            assert!(e.is_instance_of::<EstimationError>(py));
        });
    }
}
