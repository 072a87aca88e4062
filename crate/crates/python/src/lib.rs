//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists (serialized through JSON), numeric results as floats.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use synthweave_core::concept::{self, ConceptSet};
use synthweave_core::corpus::{self, BenchmarkSet};
use synthweave_core::embed::{self, EmbeddingVector};
use synthweave_core::forest::{self, ForestParams, LabeledExample, Task};
use synthweave_core::graph::{self, SampledConceptSet, SubGraph, WalkConfig};
use synthweave_core::pipeline::{self, Context, GenInputs, PipelineConfig, RunError};
use synthweave_core::qagen::{self, QuestionRecord};
use synthweave_core::scaling::{self, DataPoint, Form};
use synthweave_core::Error;

create_exception!(synthweave, SynthweaveError, PyException);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::UnreachableTarget { .. } | Error::TargetOutOfRange { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => SynthweaveError::new_err(other.to_string()),
    }
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Usage(m) => PyValueError::new_err(m),
        RunError::Failed(e) => SynthweaveError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| SynthweaveError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_enum<T: DeserializeOwned>(name: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

#[pyfunction]
fn normalize_text(s: &str) -> String {
    corpus::normalize_text(s)
}

#[pyfunction]
#[pyo3(signature = (text, dim = embed::DEFAULT_DIM, seed = 0))]
fn mock_embed(text: &str, dim: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(embed::mock_embed(text, dim, seed).map_err(py_err)?.values().to_vec())
}

/// Parses tagged concept-extraction output into a dict with `level`,
/// `subject`, `topics` and `key_concepts`.
#[pyfunction]
fn parse_concept_output(py: Python<'_>, raw: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &concept::parse_concept_output(raw).map_err(py_err)?)
}

#[pyfunction]
fn serialize_concept_output(fields: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(concept::serialize_concept_output(&from_py(fields)?))
}

#[pyfunction]
#[pyo3(signature = (questions, threshold = qagen::NEAR_DUP_THRESHOLD, shingle_size = qagen::SHINGLE_SIZE))]
fn dedup(py: Python<'_>, questions: &Bound<'_, PyAny>, threshold: f64, shingle_size: usize) -> PyResult<Py<PyAny>> {
    let qs: Vec<QuestionRecord> = from_py(questions)?;
    to_py(py, &qagen::dedup_with(&qs, threshold, shingle_size))
}

/// `benchmarks` maps benchmark name to its question texts.
#[pyfunction]
#[pyo3(signature = (questions, benchmarks, n = qagen::DECONTAM_N))]
fn decontaminate(py: Python<'_>, questions: &Bound<'_, PyAny>, benchmarks: BTreeMap<String, Vec<String>>, n: usize) -> PyResult<Py<PyAny>> {
    let qs: Vec<QuestionRecord> = from_py(questions)?;
    let sets: Vec<BenchmarkSet> = benchmarks
        .into_iter()
        .map(|(name, qs)| BenchmarkSet { name, questions: qs.iter().map(|q| corpus::normalize_text(q)).collect() })
        .collect();
    to_py(py, &qagen::decontaminate(&qs, &sets, n).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (sample, concept_sets, k = 2))]
fn ground_documents(sample: &Bound<'_, PyAny>, concept_sets: &Bound<'_, PyAny>, k: usize) -> PyResult<Vec<String>> {
    let kg: SampledConceptSet = from_py(sample)?;
    let sets: Vec<ConceptSet> = from_py(concept_sets)?;
    Ok(graph::ground_documents(&kg, &sets, k))
}

/// A fitted scaling law of any supported form.
#[pyclass(name = "ScalingFit", module = "synthweave", frozen)]
struct PyScalingFit {
    inner: scaling::Fit,
}

#[pymethods]
impl PyScalingFit {
    /// Fits `form` ("rectified", "marginal" or "power") to the points.
    /// `params` (model sizes) is required for the power form.
    #[staticmethod]
    #[pyo3(signature = (form, tokens, error_rates, params = None))]
    fn fit(form: &str, tokens: Vec<f64>, error_rates: Vec<f64>, params: Option<Vec<f64>>) -> PyResult<Self> {
        if tokens.len() != error_rates.len() || params.as_ref().is_some_and(|p| p.len() != tokens.len()) {
            return Err(PyValueError::new_err("input sequences must have equal length"));
        }
        let points: Vec<DataPoint> = tokens
            .iter()
            .zip(&error_rates)
            .enumerate()
            .map(|(i, (&d, &l))| DataPoint { tokens: d, error_rate: l, params: params.as_ref().map(|p| p[i]) })
            .collect();
        let form: Form = parse_enum(form, "form")?;
        Ok(PyScalingFit { inner: scaling::Fit::fit(form, &points).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| py_err(e.into()))?;
        let file: scaling::FitFile = serde_json::from_str(&text).map_err(|e| py_err(e.into()))?;
        Ok(PyScalingFit { inner: scaling::Fit::from_file(&file).map_err(py_err)? })
    }

    #[getter]
    fn form(&self) -> String {
        serde_json::to_value(self.inner.form()).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }

    #[getter]
    fn rmse_log(&self) -> f64 {
        self.inner.rmse_log()
    }

    /// Parameter dict, e.g. `{"B", "D_l", "beta", "E"}` for the rectified form.
    #[getter]
    fn params(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.to_file(0).map_err(py_err)?.params)
    }

    #[pyo3(signature = (tokens, params = None))]
    fn predict(&self, tokens: f64, params: Option<f64>) -> PyResult<f64> {
        self.inner.predict(tokens, params).map_err(py_err)
    }

    #[pyo3(signature = (target_error, params = None))]
    fn tokens_for_target(&self, target_error: f64, params: Option<f64>) -> PyResult<f64> {
        self.inner.tokens_for_target(target_error, params).map_err(py_err)
    }

    #[pyo3(signature = (seed = 0))]
    fn to_dict(&self, py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.to_file(seed).map_err(py_err)?)
    }

    fn __repr__(&self) -> String {
        format!("ScalingFit(form={:?}, rmse_log={:.3e})", self.form(), self.rmse_log())
    }
}

/// Bagged CART forest over embedding vectors.
#[pyclass(name = "Forest", module = "synthweave", frozen)]
struct PyForest {
    inner: forest::Forest,
}

#[pymethods]
impl PyForest {
    /// `task` is "binary" (labels 0/1) or "regression" (labels 1–10).
    #[staticmethod]
    #[pyo3(signature = (embeddings, labels, task = "binary", n_trees = 100, max_depth = 12, seed = 0))]
    fn train(embeddings: Vec<Vec<f64>>, labels: Vec<f64>, task: &str, n_trees: usize, max_depth: usize, seed: u64) -> PyResult<Self> {
        if embeddings.len() != labels.len() {
            return Err(PyValueError::new_err("embeddings and labels differ in length"));
        }
        let examples = embeddings
            .into_iter()
            .zip(labels)
            .map(|(e, label)| Ok(LabeledExample { embedding: EmbeddingVector::new(e)?, label }))
            .collect::<synthweave_core::Result<Vec<_>>>()
            .map_err(py_err)?;
        let task: Task = parse_enum(task, "task")?;
        let params = ForestParams { n_trees, max_depth, seed };
        Ok(PyForest { inner: forest::train_forest(&examples, task, &params).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyForest { inner: forest::Forest::from_json(s).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn predict(&self, v: Vec<f64>) -> PyResult<f64> {
        let v = EmbeddingVector::new(v).map_err(py_err)?;
        self.inner.predict(&v).map_err(py_err)
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }
}

/// Weighted co-occurrence graph over topics and key concepts.
#[pyclass(name = "ConceptGraph", module = "synthweave", frozen)]
struct PyConceptGraph {
    inner: graph::ConceptGraph,
}

#[pymethods]
impl PyConceptGraph {
    /// Builds the graph from concept-set dicts (`doc_id`, `level`,
    /// `subject`, `topics`, `key_concepts`).
    #[staticmethod]
    #[pyo3(signature = (concept_sets, epsilon = graph::DEFAULT_EPSILON))]
    fn build(concept_sets: &Bound<'_, PyAny>, epsilon: f64) -> PyResult<Self> {
        let sets: Vec<ConceptSet> = from_py(concept_sets)?;
        Ok(PyConceptGraph { inner: graph::build_graph(&sets, epsilon).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConceptGraph { inner: graph::ConceptGraph::load(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn topics(&self) -> Vec<String> {
        self.inner.topics().to_vec()
    }

    #[getter]
    fn key_concepts(&self) -> Vec<String> {
        self.inner.kcs().to_vec()
    }

    /// `sub` is "topic_topic", "topic_kc" or "kc_kc".
    fn count(&self, sub: &str, u: &str, v: &str) -> PyResult<u64> {
        Ok(self.inner.count(parse_enum::<SubGraph>(sub, "sub-graph")?, u, v))
    }

    fn transition_probs(&self, sub: &str, node: &str) -> PyResult<Vec<(String, f64)>> {
        self.inner.transition_probs(parse_enum(sub, "sub-graph")?, node).map_err(py_err)
    }

    /// Random-walk samples as dicts, in walk order.
    #[pyo3(signature = (epochs = 5, seed = 0, topic_steps = vec![1, 2], kc_steps = vec![3, 4]))]
    fn sample(&self, py: Python<'_>, epochs: u32, seed: u64, topic_steps: Vec<u32>, kc_steps: Vec<u32>) -> PyResult<Py<PyAny>> {
        let cfg = WalkConfig { topic_steps, kc_steps, epochs, seed };
        to_py(py, &graph::sample_kg(&self.inner, &cfg).map_err(py_err)?.samples)
    }
}

fn context(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> PyResult<Context> {
    let cfg = match config {
        Some(p) => PipelineConfig::load(&p).map_err(run_err)?,
        None => PipelineConfig::default(),
    };
    let mut overrides = BTreeMap::new();
    if let Some(s) = seed {
        overrides.insert("seed".to_string(), s.into());
    }
    let cfg = cfg.with_overrides(&overrides).map_err(run_err)?;
    Context::new(cfg, Some(out), overrides).map_err(run_err)
}

/// Runs the whole pipeline and returns the combined manifest.
#[pyfunction]
#[pyo3(signature = (out, config = None, seed = None))]
fn run_pipeline(py: Python<'_>, out: PathBuf, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let ctx = context(config, out, seed)?;
    to_py(py, &pipeline::run_pipeline(&ctx).map_err(run_err)?)
}

/// Runs one stage by its command name (e.g. "build-graph") with default
/// inputs from `out`, returning its manifest. `level` selects the
/// question-generation level.
#[pyfunction]
#[pyo3(signature = (stage, out, config = None, seed = None, level = None))]
fn run_stage(py: Python<'_>, stage: &str, out: PathBuf, config: Option<PathBuf>, seed: Option<u64>, level: Option<u8>) -> PyResult<Py<PyAny>> {
    let ctx = context(config, out, seed)?;
    let m = match stage {
        "filter-coldstart" => pipeline::filter_coldstart(&ctx),
        "filter-refine" => pipeline::filter_refine(&ctx, None),
        "extract-concepts" => pipeline::extract_concepts(&ctx, None),
        "build-graph" => pipeline::build_graph_stage(&ctx, None),
        "sample-concepts" => pipeline::sample_concepts(&ctx, None),
        "gen-questions" => {
            let level = level.ok_or_else(|| PyValueError::new_err("gen-questions needs level"))?;
            pipeline::gen_questions(&ctx, level, &GenInputs::default())
        }
        "dedup" => pipeline::dedup_stage(&ctx, &[]),
        "decontaminate" => pipeline::decontaminate_stage(&ctx, None),
        "gen-answers" => pipeline::gen_answers_stage(&ctx, None),
        other => return Err(PyValueError::new_err(format!("unknown stage {other:?}"))),
    }
    .map_err(run_err)?;
    to_py(py, &m)
}

#[pymodule]
fn synthweave(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SynthweaveError", m.py().get_type::<SynthweaveError>())?;
    m.add_class::<PyScalingFit>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyConceptGraph>()?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(mock_embed, m)?)?;
    m.add_function(wrap_pyfunction!(parse_concept_output, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_concept_output, m)?)?;
    m.add_function(wrap_pyfunction!(dedup, m)?)?;
    m.add_function(wrap_pyfunction!(decontaminate, m)?)?;
    m.add_function(wrap_pyfunction!(ground_documents, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    Ok(())
}
