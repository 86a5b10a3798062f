//! Python module `blochhom`: models, effective data, germs, band fits, sweeps,
//! Cauchy error tables and the validation suite. Structured results are
//! returned as JSON text with 17-digit floats.

use bloch_homog::bloch::FiberAssembler;
use bloch_homog::cauchy::{Bump, CauchyProblem};
use bloch_homog::cell::EffectiveData;
use bloch_homog::config::{ModelConfig, RunConfig};
use bloch_homog::expsweep::{k_grid, run_sweep, sharpness_probe, DiscrepancyFiber, KGridOptions, Law};
use bloch_homog::germ::{classify, germ_report, GermRow};
use bloch_homog::lattice::FourierBasis;
use bloch_homog::linalg::C64;
use bloch_homog::models::{self, ModelDescriptor};
use bloch_homog::oracle::{fit_all, OracleOptions};
use bloch_homog::report::to_json;
use bloch_homog::validate;
use bloch_homog::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::collections::BTreeMap;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Model(_) | Error::Dimension(_) | Error::SupportOverflow(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_law(law: &str) -> PyResult<Law> {
    match law {
        "general" => Ok(Law::General),
        "enhanced" => Ok(Law::Enhanced),
        other => Err(PyValueError::new_err(format!("unknown law '{other}'"))),
    }
}

/// A periodic operator A = f* b(D)* g b(D) f from the zoo or a TOML config.
#[pyclass(name = "Model", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: ModelDescriptor,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let inner = models::by_name(name, &params.unwrap_or_default()).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    /// Build the model described by the `[model]` section of a TOML run config.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let cfg = RunConfig::from_toml(text).map_err(py_err)?;
        Ok(PyModel { inner: cfg.model.build().map_err(py_err)? })
    }

    #[staticmethod]
    fn zoo_names() -> Vec<String> {
        models::zoo().into_iter().map(|m| m.name).collect()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.spec.lattice.dim
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.spec.m
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.spec.n
    }

    #[getter]
    fn default_cutoff(&self) -> f64 {
        self.inner.default_cutoff
    }

    /// Known closed-form values as (name, value) pairs.
    fn known_values(&self) -> Vec<(String, f64)> {
        self.inner.known_values.iter().map(|k| (k.quantity.clone(), k.value)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, d={}, m={}, n={})", self.inner.name, self.dim(), self.m(), self.n())
    }
}

/// Effective data and Bloch fibers of a model at a fixed basis cutoff.
#[pyclass(name = "Homogenizer")]
pub struct PyHomogenizer {
    model: ModelDescriptor,
    eff: EffectiveData,
    asm: FiberAssembler,
}

impl PyHomogenizer {
    fn thetas(&self, count: usize) -> Vec<Vec<f64>> {
        validate::thetas_for(self.model.spec.lattice.dim, count)
    }
}

#[pymethods]
impl PyHomogenizer {
    #[new]
    #[pyo3(signature = (model, cutoff = None))]
    fn new(model: &PyModel, cutoff: Option<f64>) -> PyResult<Self> {
        let m = model.inner.clone();
        let basis = FourierBasis::new(&m.spec.lattice, cutoff.unwrap_or(m.default_cutoff)).map_err(py_err)?;
        let eff = EffectiveData::compute(&m.spec, &basis).map_err(py_err)?;
        let asm = FiberAssembler::new(&m.spec, &basis).map_err(py_err)?;
        Ok(PyHomogenizer { model: m, eff, asm })
    }

    /// g⁰ as rows of (re, im) pairs.
    fn g0(&self) -> Vec<Vec<(f64, f64)>> {
        let g = &self.eff.g0;
        (0..g.nrows()).map(|i| (0..g.ncols()).map(|j| (g[(i, j)].re, g[(i, j)].im)).collect()).collect()
    }

    /// Effective matrices and correctors.
    fn effective_json(&self) -> String {
        to_json(&self.eff.report())
    }

    /// Germ summary (γ, μ, ν, |N̂|, |N̂₀|) at one direction.
    fn germ_json(&self, theta: Vec<f64>) -> PyResult<String> {
        if theta.len() != self.model.spec.lattice.dim {
            return Err(PyValueError::new_err("θ has the wrong dimension"));
        }
        Ok(to_json(&GermRow::from(&germ_report(&self.model.spec, &self.eff, &theta))))
    }

    /// Regime classification over a θ grid.
    #[pyo3(signature = (theta_count = 64))]
    fn classify_json(&self, theta_count: usize) -> String {
        to_json(&classify(&self.model.spec, &self.eff, &self.thetas(theta_count)).0)
    }

    /// Lowest `count` eigenvalues of the Bloch fiber at k.
    fn bands(&self, k: Vec<f64>, count: usize) -> PyResult<Vec<f64>> {
        if k.len() != self.model.spec.lattice.dim {
            return Err(PyValueError::new_err("k has the wrong dimension"));
        }
        Ok(self.asm.lowest_eigenvalues(&k, count))
    }

    /// Dispersion fits of the lowest `count` bands along θ.
    #[pyo3(signature = (theta, count = None))]
    fn fit_bands_json(&self, theta: Vec<f64>, count: Option<usize>) -> PyResult<String> {
        let fits = fit_all(&self.asm, &theta, count.unwrap_or(self.model.spec.n), &OracleOptions::default()).map_err(py_err)?;
        Ok(to_json(&fits))
    }

    /// ‖(e^{-iτA_ε} − e^{-iτA⁰})(ε² A⁰ + 1)^{-s/2}‖ on the fiber at k.
    fn discrepancy(&self, k: Vec<f64>, eps: f64, tau: f64, s: f64) -> PyResult<f64> {
        if k.len() != self.model.spec.lattice.dim {
            return Err(PyValueError::new_err("k has the wrong dimension"));
        }
        Ok(DiscrepancyFiber::new(&self.model.spec, &self.eff, &self.asm, &k).norm(eps, tau, s))
    }

    /// Sup-norm sweep over (ε, τ) on the default k grid.
    fn sweep_json(&self, eps_list: Vec<f64>, tau_list: Vec<f64>, s: f64, law: &str) -> PyResult<String> {
        let law = parse_law(law)?;
        let eps_min = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
        let grid = k_grid(&self.model.spec, &KGridOptions::default(), eps_min).map_err(py_err)?;
        let res = run_sweep(&self.model.spec, &self.eff, &self.asm, &grid, &eps_list, &tau_list, s, law).map_err(py_err)?;
        Ok(to_json(&res))
    }

    /// Extremal-fiber probe table along θ₀.
    fn sharpness_json(&self, theta0: Vec<f64>, s: f64, tau_list: Vec<f64>, law: &str) -> PyResult<String> {
        let law = parse_law(law)?;
        let t = sharpness_probe(&self.model.spec, &self.eff, &self.asm, &theta0, s, &tau_list, law).map_err(py_err)?;
        Ok(to_json(&t))
    }

    /// L² error table of the Cauchy problem for bump data of unit H^s norm,
    /// at fixed τ or, when `alpha` is given, at τ = ε^{-α}.
    #[pyo3(signature = (eps_list, s, law, tau = 1.0, alpha = None, radius = 4.0, power = 6, fiber_cutoff = None))]
    #[allow(clippy::too_many_arguments)]
    fn cauchy_json(
        &self,
        eps_list: Vec<f64>,
        s: f64,
        law: &str,
        tau: f64,
        alpha: Option<f64>,
        radius: f64,
        power: u32,
        fiber_cutoff: Option<f64>,
    ) -> PyResult<String> {
        let spec = &self.model.spec;
        let bump = Bump::new(vec![0.0; spec.lattice.dim], radius, power).map_err(py_err)?;
        let amp = vec![C64::new(1.0, 0.0); spec.n];
        let mut p = CauchyProblem::new(spec, &self.eff, &self.asm, bump, amp, s, parse_law(law)?).map_err(py_err)?.normalized();
        if let Some(fc) = fiber_cutoff {
            p = p.with_fiber_cutoff(fc).map_err(py_err)?;
        }
        let t = match alpha {
            Some(a) => p.long_time_table(a, &eps_list),
            None => p.eps_table(tau, &eps_list),
        }
        .map_err(py_err)?;
        Ok(to_json(&t))
    }
}

/// Run the property suite; `config` is an optional TOML run config.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn validate_json(config: Option<&str>) -> PyResult<String> {
    let cfg = match config {
        Some(t) => RunConfig::from_toml(t).map_err(py_err)?,
        None => RunConfig::default(),
    };
    Ok(to_json(&validate::run(&cfg.validate_options()).map_err(py_err)?))
}

/// Parse and check a TOML run config; returns it re-serialized with defaults filled in.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    Ok(RunConfig::from_toml(text).map_err(py_err)?.to_toml())
}

/// A model from an inline `[model]` table given as TOML text.
#[pyfunction]
fn model_from_toml(text: &str) -> PyResult<PyModel> {
    let mc: ModelConfig = bloch_homog::config::model_from_toml(text).map_err(py_err)?;
    Ok(PyModel { inner: mc.build().map_err(py_err)? })
}

#[pymodule]
fn blochhom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyHomogenizer>()?;
    m.add_function(wrap_pyfunction!(validate_json, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add_function(wrap_pyfunction!(model_from_toml, m)?)?;
    Ok(())
}
