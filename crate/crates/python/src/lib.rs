//! Python bindings for the `hirope` crate.
//!
//! Structured results (segmentations, split reports, evaluations) cross the
//! boundary as plain dicts and lists built from their JSON form.

use hirope::code::{self, Python as PythonGrammar, SegmentationStrategy};
use hirope::tinylm::{self, Checkpoint, ModelConfig, SyntheticTaskConfig, TrainConfig};
use hirope::{dims, hier, metrics, rope};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

fn err(e: hirope::Error) -> PyErr {
    match e {
        hirope::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{}: {e}", e.code())),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Defaults of `T` overridden by the keys of a JSON object.
fn with_overrides<T: Serialize + DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    let mut base = serde_json::to_value(T::default()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(text) = json {
        let patch: Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let Value::Object(patch) = patch else {
            return Err(PyValueError::new_err("overrides must be a JSON object"));
        };
        let obj = base.as_object_mut().expect("config serializes to an object");
        if let Some(unknown) = patch.keys().find(|k| !obj.contains_key(*k)) {
            return Err(PyValueError::new_err(format!("unknown setting {unknown:?}")));
        }
        obj.extend(patch);
    }
    serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "RotaryConfig", from_py_object)]
#[derive(Clone)]
struct PyRotaryConfig(rope::RotaryConfig);

#[pymethods]
impl PyRotaryConfig {
    #[new]
    #[pyo3(signature = (head_dim, base = rope::DEFAULT_BASE))]
    fn new(head_dim: usize, base: f64) -> PyResult<Self> {
        rope::RotaryConfig::new(head_dim, base).map(Self).map_err(err)
    }

    #[getter]
    fn head_dim(&self) -> usize {
        self.0.head_dim()
    }

    #[getter]
    fn base(&self) -> f64 {
        self.0.base()
    }

    fn thetas(&self) -> Vec<f64> {
        self.0.thetas().to_vec()
    }

    fn periods(&self) -> Vec<f64> {
        dims::periods(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("RotaryConfig(head_dim={}, base={})", self.0.head_dim(), self.0.base())
    }
}

#[pyclass(name = "HierPos", from_py_object)]
#[derive(Clone)]
struct PyHierPos(hier::HierPos);

#[pymethods]
impl PyHierPos {
    /// `levels` run coarse to fine; `global` is the flat token index.
    #[new]
    fn new(levels: Vec<u64>, global: u64) -> PyResult<Self> {
        hier::HierPos::new(levels, global).map(Self).map_err(err)
    }

    #[staticmethod]
    fn flat(global: u64) -> Self {
        Self(hier::HierPos::flat(global))
    }

    #[getter]
    fn levels(&self) -> Vec<u64> {
        self.0.levels().to_vec()
    }

    #[getter]
    fn global_index(&self) -> u64 {
        self.0.global()
    }

    fn __repr__(&self) -> String {
        format!(
            "HierPos(levels={:?}, global_index={})",
            self.0.levels(),
            self.0.global()
        )
    }
}

#[pyclass(name = "Strategy", from_py_object)]
#[derive(Clone)]
struct PyStrategy(hier::PositionStrategy);

#[pymethods]
impl PyStrategy {
    #[staticmethod]
    fn origin() -> Self {
        Self(hier::PositionStrategy::Origin)
    }

    /// `pair_counts` run coarse to fine; the last entry is the token level.
    #[staticmethod]
    fn hirope(pair_counts: Vec<usize>, window: u64) -> PyResult<Self> {
        Ok(Self(hier::PositionStrategy::HiRope {
            split: hier::DimSplit::new(pair_counts).map_err(err)?,
            window: hier::WindowConfig::new(window).map_err(err)?,
        }))
    }

    #[staticmethod]
    fn hirope_with_ratio(ratio: f64, window: u64, cfg: &PyRotaryConfig) -> PyResult<Self> {
        hier::PositionStrategy::hirope_with_ratio(ratio, window, &cfg.0)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn rerope(window: u64) -> Self {
        Self(hier::PositionStrategy::ReRope { window })
    }

    #[staticmethod]
    fn self_extend(group: u64, neighbor: u64) -> Self {
        Self(hier::PositionStrategy::SelfExtend { group, neighbor })
    }

    #[staticmethod]
    fn ntk(scale: f64) -> Self {
        Self(hier::PositionStrategy::Ntk { scale })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn validate(&self, cfg: &PyRotaryConfig) -> PyResult<()> {
        self.0.validate(&cfg.0).map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        serde_json::to_string(&self.0).unwrap_or_default()
    }
}

#[pyfunction]
fn apply_rope(x: Vec<f64>, m: u64, cfg: &PyRotaryConfig) -> PyResult<Vec<f64>> {
    rope::apply_rope(&x, m, &cfg.0).map_err(err)
}

#[pyfunction]
fn rope_score(q: Vec<f64>, k: Vec<f64>, m: u64, n: u64, cfg: &PyRotaryConfig) -> PyResult<f64> {
    rope::rope_score(&q, &k, m, n, &cfg.0).map_err(err)
}

/// Score of one causal query/key pair under `strategy`.
#[pyfunction]
fn pair_score(
    strategy: &PyStrategy,
    q: Vec<f64>,
    k: Vec<f64>,
    p_q: &PyHierPos,
    p_k: &PyHierPos,
    cfg: &PyRotaryConfig,
) -> PyResult<f64> {
    hier::pair_score(&strategy.0, &q, &k, &p_q.0, &p_k.0, &cfg.0).map_err(err)
}

/// Causal score matrix as a list of rows; row `i` holds `i + 1` scores.
#[pyfunction]
fn attention_scores(
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    positions: Vec<PyHierPos>,
    strategy: &PyStrategy,
    cfg: &PyRotaryConfig,
) -> PyResult<Vec<Vec<f64>>> {
    let positions: Vec<_> = positions.into_iter().map(|p| p.0).collect();
    let m = hier::attention_scores(&queries, &keys, &positions, &strategy.0, &cfg.0).map_err(err)?;
    Ok((0..m.len()).map(|i| m.row(i).to_vec()).collect())
}

#[pyfunction]
fn windowed_pair_distances(
    p_q: &PyHierPos,
    p_k: &PyHierPos,
    pair_counts: Vec<usize>,
    window: u64,
) -> PyResult<Vec<i64>> {
    let split = hier::DimSplit::new(pair_counts).map_err(err)?;
    let window = hier::WindowConfig::new(window).map_err(err)?;
    hier::windowed_pair_distances(&p_q.0, &p_k.0, &split, window).map_err(err)
}

#[pyfunction]
fn reliable_split(py: Python<'_>, pretrain_len: u64, cfg: &PyRotaryConfig) -> PyResult<Py<PyAny>> {
    to_py(py, &dims::reliable_split(pretrain_len, &cfg.0).map_err(err)?)
}

#[pyfunction]
fn suggest_split(pretrain_len: u64, cfg: &PyRotaryConfig) -> PyResult<Vec<usize>> {
    Ok(dims::suggest_split(pretrain_len, &cfg.0)
        .map_err(err)?
        .pair_counts()
        .to_vec())
}

fn segmentation(source: &str, strategy: &str) -> PyResult<(Vec<code::TokenSpan>, code::Segmentation)> {
    let strategy: SegmentationStrategy = strategy.parse().map_err(err)?;
    let spans = code::tokenize(source);
    let seg = code::parse_segments(source.as_bytes(), strategy, &spans, &PythonGrammar).map_err(err)?;
    Ok((spans, seg))
}

/// Segments of a Python source: `function`, `statement` or `fixed:<n>`.
#[pyfunction]
#[pyo3(signature = (source, strategy = "function"))]
fn segment(py: Python<'_>, source: &str, strategy: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &segmentation(source, strategy)?.1)
}

/// Hierarchical position of every lexical token of a Python source.
#[pyfunction]
#[pyo3(signature = (source, strategy = "function"))]
fn positions(source: &str, strategy: &str) -> PyResult<Vec<PyHierPos>> {
    let (spans, seg) = segmentation(source, strategy)?;
    let pos = code::assign_hier_positions(&spans, &seg.segments).map_err(err)?;
    Ok(pos.into_iter().map(PyHierPos).collect())
}

#[pyfunction]
fn extract_symbols(source: &str) -> PyResult<Vec<String>> {
    Ok(code::extract_symbols(source, &PythonGrammar)
        .map_err(err)?
        .names()
        .to_vec())
}

#[pyfunction]
fn recall(predicted: Vec<String>, gold: Vec<String>) -> PyResult<f64> {
    metrics::recall(&predicted, &gold).map_err(err)
}

#[pyfunction]
fn edit_similarity(pred: &str, gold: &str) -> f64 {
    metrics::edit_similarity(pred, gold)
}

#[pyfunction]
fn parse_model_output_symbols(raw: &str) -> Vec<String> {
    metrics::parse_model_output_symbols(raw)
}

#[pyfunction]
fn bucket_by_length(py: Python<'_>, lengths: Vec<u64>, edges: Vec<u64>) -> PyResult<Py<PyAny>> {
    to_py(py, &metrics::bucket_by_length(&lengths, &edges).map_err(err)?)
}

/// Synthetic recall corpus; `task` is a JSON object overriding the defaults.
#[pyfunction]
#[pyo3(signature = (seed, task = None))]
fn generate_corpus(py: Python<'_>, seed: u64, task: Option<&str>) -> PyResult<Py<PyAny>> {
    let task: SyntheticTaskConfig = with_overrides(task)?;
    to_py(py, &tinylm::generate_corpus(&task, seed).map_err(err)?)
}

#[pyclass(name = "TinyLM")]
struct PyTinyLM(tinylm::Model);

#[pymethods]
impl PyTinyLM {
    /// `config` is a JSON object overriding the default model settings.
    #[new]
    #[pyo3(signature = (config = None, strategy = None))]
    fn new(config: Option<&str>, strategy: Option<&PyStrategy>) -> PyResult<Self> {
        let mut cfg: ModelConfig = with_overrides(config)?;
        if let Some(s) = strategy {
            cfg.strategy = s.0.clone();
        }
        tinylm::Model::new(cfg).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        ckpt.into_model().map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let text = serde_json::to_string(&Checkpoint::from_model(&self.0))
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.0.config())
    }

    /// Logits, one row per token.
    #[pyo3(signature = (tokens, positions = None))]
    fn forward(&self, tokens: Vec<u32>, positions: Option<Vec<PyHierPos>>) -> PyResult<Vec<Vec<f64>>> {
        let pos = resolve_positions(tokens.len(), positions);
        let logits = self.0.forward(&tokens, &pos).map_err(err)?;
        Ok(logits.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Next-token negative log-likelihoods and greedy hits.
    #[pyo3(signature = (tokens, positions = None))]
    fn score(&self, tokens: Vec<u32>, positions: Option<Vec<PyHierPos>>) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let pos = resolve_positions(tokens.len(), positions);
        let s = self.0.score_tokens(&tokens, &pos).map_err(err)?;
        Ok((s.nll, s.correct))
    }

    /// Trains on a synthetic corpus and returns the per-step losses.
    #[pyo3(signature = (corpus_seed = 0, train = None, task = None))]
    fn train(
        &mut self,
        py: Python<'_>,
        corpus_seed: u64,
        train: Option<&str>,
        task: Option<&str>,
    ) -> PyResult<Vec<f64>> {
        let train: TrainConfig = with_overrides(train)?;
        let task: SyntheticTaskConfig = with_overrides(task)?;
        let model = &mut self.0;
        let curve = py
            .detach(|| {
                let corpus = tinylm::generate_corpus(&task, corpus_seed)?;
                tinylm::train(model, &train, &corpus)
            })
            .map_err(err)?;
        Ok(curve.points().iter().map(|p| p.loss).collect())
    }

    /// Mean loss, perplexity and accuracy at each evaluation length.
    #[pyo3(signature = (lengths, seed = 12345, count = 16, task = None))]
    fn evaluate(
        &self,
        py: Python<'_>,
        lengths: Vec<usize>,
        seed: u64,
        count: usize,
        task: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let task: SyntheticTaskConfig = with_overrides(task)?;
        let rows = tinylm::evaluate_lengths(&self.0, &lengths, &task, seed, count).map_err(err)?;
        to_py(py, &rows)
    }
}

fn resolve_positions(n: usize, positions: Option<Vec<PyHierPos>>) -> Vec<hier::HierPos> {
    match positions {
        Some(p) => p.into_iter().map(|p| p.0).collect(),
        None => (0..n as u64).map(hier::HierPos::flat).collect(),
    }
}

#[pymodule]
fn hirope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRotaryConfig>()?;
    m.add_class::<PyHierPos>()?;
    m.add_class::<PyStrategy>()?;
    m.add_class::<PyTinyLM>()?;
    m.add_function(wrap_pyfunction!(apply_rope, m)?)?;
    m.add_function(wrap_pyfunction!(rope_score, m)?)?;
    m.add_function(wrap_pyfunction!(pair_score, m)?)?;
    m.add_function(wrap_pyfunction!(attention_scores, m)?)?;
    m.add_function(wrap_pyfunction!(windowed_pair_distances, m)?)?;
    m.add_function(wrap_pyfunction!(reliable_split, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_split, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(positions, m)?)?;
    m.add_function(wrap_pyfunction!(extract_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(recall, m)?)?;
    m.add_function(wrap_pyfunction!(edit_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(parse_model_output_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_by_length, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add("DESK_WINDOW", tinylm::DESK_WINDOW)?;
    Ok(())
}
