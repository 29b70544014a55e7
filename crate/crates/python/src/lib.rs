//! Python bindings. Weight vectors cross the boundary as dicts keyed by
//! `"language/domain"` (domain level) or by language.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt};

use xdoge::corpus::{
    dedup_report, generate_synthetic, ingest_manifest, tokenize, Manifest, SyntheticConfig,
    TokenizerSpec,
};
use xdoge::optimizer::{lr_at as core_lr_at, StepSchedule, XdogeConfig};
use xdoge::rescale::{LanguageInventory, LanguageSampler, PlanCaps};
use xdoge::simplex::{project_floor_values, ProjectionMode};
use xdoge::weights::LanguageWeightSet;
use xdoge::{Error, SourceKey, WeightVector};

fn to_py(e: Error) -> PyErr {
    if e.exit_code() == 1 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn domain_vector(weights: BTreeMap<String, f64>) -> PyResult<WeightVector> {
    let entries = weights
        .into_iter()
        .map(|(k, w)| Ok((k.parse::<SourceKey>().map_err(to_py)?, w)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    WeightVector::new(entries, None).map_err(to_py)
}

fn domain_dict(v: &WeightVector) -> BTreeMap<String, f64> {
    v.iter().map(|(k, w)| (k.to_string(), w)).collect()
}

fn language_set(weights: BTreeMap<String, f64>) -> PyResult<LanguageWeightSet> {
    LanguageWeightSet::new(weights, Vec::new()).map_err(to_py)
}

/// Floor projection of a normalized list of weights.
#[pyfunction]
#[pyo3(signature = (values, gamma, single_pass = false))]
fn project_floor(values: Vec<f64>, gamma: f64, single_pass: bool) -> PyResult<Vec<f64>> {
    let mode = if single_pass {
        ProjectionMode::SinglePass
    } else {
        ProjectionMode::FixedPoint
    };
    Ok(project_floor_values(&values, gamma, mode)
        .map_err(to_py)?
        .values)
}

#[pyfunction]
fn kl_x100(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    xdoge::simplex::kl_x100(&p, &q).map_err(to_py)
}

#[pyfunction]
fn lr_at(lr_peak: f64, warmup_steps: u64, total_steps: u64, step: u64) -> PyResult<f64> {
    core_lr_at(&StepSchedule::new(lr_peak, warmup_steps, total_steps), step).map_err(to_py)
}

#[pyfunction]
fn aggregate_languages(weights: BTreeMap<String, f64>) -> PyResult<BTreeMap<String, f64>> {
    let v = domain_vector(weights)?;
    Ok(xdoge::weights::aggregate_languages(&v)
        .map_err(to_py)?
        .weights()
        .clone())
}

#[pyfunction]
fn average_sets(sets: Vec<BTreeMap<String, f64>>) -> PyResult<BTreeMap<String, f64>> {
    let sets = sets
        .into_iter()
        .map(language_set)
        .collect::<PyResult<Vec<_>>>()?;
    Ok(xdoge::weights::average_sets(&sets)
        .map_err(to_py)?
        .weights()
        .clone())
}

#[pyfunction]
fn kl_divergence_x100(p: BTreeMap<String, f64>, q: BTreeMap<String, f64>) -> PyResult<f64> {
    xdoge::simplex::kl_divergence_x100(&domain_vector(p)?, &domain_vector(q)?).map_err(to_py)
}

/// Returns one dict per language with the plan columns.
#[pyfunction]
#[pyo3(signature = (weights, inventory, budget, max_repetition = None, min_utilization = None))]
fn plan<'py>(
    py: Python<'py>,
    weights: BTreeMap<String, f64>,
    inventory: BTreeMap<String, u64>,
    budget: u64,
    max_repetition: Option<f64>,
    min_utilization: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let p = xdoge::rescale::plan(
        &language_set(weights)?,
        &LanguageInventory::new(inventory).map_err(to_py)?,
        budget,
        PlanCaps {
            max_repetition,
            min_utilization,
        },
    )
    .map_err(to_py)?;
    p.rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("language", &r.language)?;
            d.set_item("weight", r.weight)?;
            d.set_item("available", r.available)?;
            d.set_item("demanded", r.demanded)?;
            d.set_item("repetition", r.repetition)?;
            d.set_item("utilization", r.utilization)?;
            Ok(d)
        })
        .collect()
}

#[pyclass(name = "Corpus", module = "xdoge_py")]
struct PyCorpus {
    inner: xdoge::Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Ingests and tokenizes a manifest. `vocab_size` selects the synthetic
    /// alphabet tokenizer; the default is bytes.
    #[staticmethod]
    #[pyo3(signature = (path, vocab_size = None))]
    fn from_manifest(path: &str, vocab_size: Option<usize>) -> PyResult<Self> {
        let corpus = ingest_manifest(&Manifest::from_path(path).map_err(to_py)?).map_err(to_py)?;
        let spec = vocab_size.map_or(TokenizerSpec::Byte, |v| TokenizerSpec::Alphabet {
            vocab_size: v,
        });
        let tokenizer = spec.build().map_err(to_py)?;
        let inner = tokenize(&corpus, tokenizer.as_ref()).map_err(to_py)?;
        Ok(PyCorpus { inner })
    }

    /// Generates a corpus from a synthetic config given as TOML text.
    #[staticmethod]
    fn synthetic(config: &str, seed: u64) -> PyResult<Self> {
        let cfg = SyntheticConfig::parse(config).map_err(to_py)?;
        Ok(PyCorpus {
            inner: generate_synthetic(&cfg, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn keys(&self) -> Vec<String> {
        self.inner.keys().iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn document_count(&self) -> usize {
        self.inner.document_count()
    }

    #[getter]
    fn token_count(&self) -> u64 {
        self.inner.token_count()
    }

    /// Per-source exact dedup; returns the cleaned corpus and removed counts.
    fn dedup(&self) -> (PyCorpus, BTreeMap<String, usize>) {
        let (inner, report) = dedup_report(&self.inner);
        let removed = report
            .rows
            .iter()
            .map(|r| (r.key.to_string(), r.removed))
            .collect();
        (PyCorpus { inner }, removed)
    }

    /// `n` language-level draws as `(language, source, document_id)`.
    fn sample(
        &self,
        weights: BTreeMap<String, f64>,
        n: usize,
        seed: u64,
    ) -> PyResult<Vec<(String, String, String)>> {
        let set = language_set(weights)?;
        let sampler = LanguageSampler::new(&set, &self.inner, seed).map_err(to_py)?;
        Ok(sampler
            .take(n)
            .map(|d| (d.language, d.source.to_string(), d.document_id))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(k={}, documents={})",
            self.inner.k(),
            self.inner.document_count()
        )
    }
}

#[pyclass(name = "XdogeConfig", module = "xdoge_py")]
struct PyXdogeConfig {
    inner: XdogeConfig,
}

fn toml_value(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if v.is_instance_of::<PyBool>() {
        Ok(toml::Value::Boolean(v.extract()?))
    } else if v.is_instance_of::<PyInt>() {
        Ok(toml::Value::Integer(v.extract()?))
    } else if v.is_instance_of::<PyFloat>() {
        Ok(toml::Value::Float(v.extract()?))
    } else {
        Err(PyValueError::new_err(format!(
            "unsupported config value {v}"
        )))
    }
}

#[pymethods]
impl PyXdogeConfig {
    /// Keyword arguments override the defaults, e.g. `XdogeConfig(steps=100)`.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut table = toml::Table::new();
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                table.insert(k.extract::<String>()?, toml_value(&v)?);
            }
        }
        let inner: XdogeConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
        Ok(PyXdogeConfig { inner })
    }

    fn to_toml(&self) -> String {
        toml::to_string(&self.inner).expect("config serializes")
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Trajectory", module = "xdoge_py")]
struct PyTrajectory {
    inner: xdoge::weights::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn steps(&self) -> Vec<u64> {
        self.inner.records().iter().map(|r| r.step).collect()
    }

    /// Domain weights of record `i`.
    fn alpha(&self, i: usize) -> PyResult<BTreeMap<String, f64>> {
        let r = self
            .inner
            .records()
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("no record {i}")))?;
        Ok(domain_dict(&r.alpha))
    }

    fn smooth(&self, window: usize) -> PyResult<BTreeMap<String, f64>> {
        Ok(domain_dict(
            &xdoge::weights::smooth(&self.inner, window).map_err(to_py)?,
        ))
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }
}

/// Runs the reweighting loop from uniform weights.
#[pyfunction]
#[pyo3(signature = (corpus, config = None))]
fn run_xdoge(
    py: Python<'_>,
    corpus: &PyCorpus,
    config: Option<&PyXdogeConfig>,
) -> PyResult<PyTrajectory> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let inner = py
        .detach(|| xdoge::optimizer::run(&cfg, &corpus.inner, None))
        .map_err(to_py)?;
    Ok(PyTrajectory { inner })
}

#[pymodule]
fn xdoge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyXdogeConfig>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(project_floor, m)?)?;
    m.add_function(wrap_pyfunction!(kl_x100, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence_x100, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_languages, m)?)?;
    m.add_function(wrap_pyfunction!(average_sets, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_xdoge, m)?)?;
    Ok(())
}
