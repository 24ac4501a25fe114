//! Python bindings: gateway, histories, trees, retrieval, generation and scoring.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyList;

use tacitree::cli;
use tacitree::config::RunConfig;
use tacitree::corpus::{self, ExampleConfig, KindSelection};
use tacitree::eval::{self, EvalConfig, EvalContext, ReportSet, Strategy};
use tacitree::model::{parse_history, read_history, serialize_history};
use tacitree::retrieve::{answer, Granularity};
use tacitree::tree::build_tree_for_history;
use tacitree::{BuildConfig, ConversationHistory, RetrievalConfig};

create_exception!(tacitree_py, TacitreeError, PyException, "Base class for every tacitree failure.");
create_exception!(tacitree_py, InputError, TacitreeError, "Malformed or inconsistent input.");
create_exception!(tacitree_py, BackendError, TacitreeError, "A model backend failed or was unreachable.");

fn input_err(e: impl Display) -> PyErr {
    InputError::new_err(e.to_string())
}

fn backend_err(e: impl Display) -> PyErr {
    BackendError::new_err(e.to_string())
}

fn cli_err(e: cli::CliError) -> PyErr {
    match e {
        cli::CliError::Backend(_) => backend_err(e),
        _ => input_err(e),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn granularity(name: &str) -> PyResult<Granularity> {
    match name {
        "summaries" => Ok(Granularity::Summaries),
        "facts" => Ok(Granularity::Facts),
        other => Err(input_err(format!("unknown granularity {other:?}; expected summaries or facts"))),
    }
}

/// Model access: the deterministic mock, or backends described by a config file.
#[pyclass(name = "Gateway", module = "tacitree_py", frozen)]
struct PyGateway {
    inner: Arc<tacitree::Gateway>,
    seed: u64,
}

#[pymethods]
impl PyGateway {
    #[staticmethod]
    #[pyo3(signature = (max_inflight = 4))]
    fn mock(max_inflight: usize) -> PyResult<Self> {
        if max_inflight == 0 {
            return Err(input_err("max_inflight must be at least 1"));
        }
        Ok(Self { inner: Arc::new(tacitree::Gateway::mock(max_inflight)), seed: 0 })
    }

    /// Reads a TOML run config; fixtures configured there are honoured.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let cfg = RunConfig::load(&path).map_err(input_err)?;
        let gw = cfg.gateway().map_err(input_err)?;
        Ok(Self { inner: Arc::new(gw), seed: cfg.seed })
    }

    /// Unit-norm embeddings, one list per text.
    fn embed(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<Vec<Vec<f32>>> {
        let gw = &self.inner;
        let vs = py.detach(|| gw.embed(&texts)).map_err(backend_err)?;
        Ok(vs.into_iter().map(|v| v.values().to_vec()).collect())
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.inner.count_tokens(text)
    }

    /// Number of backend calls made so far.
    fn call_count(&self) -> usize {
        self.inner.call_log().len()
    }

    fn save_fixtures(&self) -> PyResult<()> {
        self.inner.save_fixtures().map_err(backend_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.seed
    }

    fn __repr__(&self) -> String {
        format!("Gateway(max_inflight={})", self.inner.max_inflight())
    }
}

/// A conversation history of timestamped sessions.
#[pyclass(name = "History", module = "tacitree_py", frozen)]
struct PyHistory {
    inner: Arc<ConversationHistory>,
}

#[pymethods]
impl PyHistory {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(read_history(&path).map_err(input_err)?) })
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(parse_history(text.as_bytes()).map_err(input_err)?) })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        String::from_utf8(serialize_history(&self.inner)).map_err(input_err)
    }

    #[getter]
    fn history_id(&self) -> String {
        self.inner.history_id.clone()
    }

    #[getter]
    fn session_ids(&self) -> Vec<String> {
        self.inner.sessions.iter().map(|s| s.session_id.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.sessions.len()
    }

    fn __repr__(&self) -> String {
        format!("History(id={:?}, sessions={})", self.inner.history_id, self.inner.sessions.len())
    }
}

/// A hierarchical memory over the facts of one history.
#[pyclass(name = "MemoryTree", module = "tacitree_py", frozen)]
struct PyMemoryTree {
    inner: Arc<tacitree::MemoryTree>,
}

#[pymethods]
impl PyMemoryTree {
    #[staticmethod]
    #[pyo3(signature = (gateway, history, seed = None, k = None, root_size = None))]
    fn build(
        py: Python<'_>,
        gateway: &PyGateway,
        history: &PyHistory,
        seed: Option<u64>,
        k: Option<usize>,
        root_size: Option<usize>,
    ) -> PyResult<Self> {
        let mut cfg = BuildConfig { seed: seed.unwrap_or(gateway.seed), ..BuildConfig::default() };
        if let Some(k) = k {
            cfg.max_cluster_size = k;
        }
        if let Some(l) = root_size {
            cfg.root_size = l;
        }
        let (gw, h) = (&gateway.inner, &history.inner);
        let tree = py.detach(|| build_tree_for_history(gw, h, &cfg)).map_err(input_err)?;
        Ok(Self { inner: Arc::new(tree) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(tacitree::MemoryTree::read(&path).map_err(input_err)?) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(tacitree::MemoryTree::load(text.as_bytes()).map_err(input_err)?) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(input_err)
    }

    fn to_json(&self) -> PyResult<String> {
        String::from_utf8(self.inner.persist()).map_err(input_err)
    }

    #[getter]
    fn tree_id(&self) -> String {
        self.inner.tree_id.clone()
    }

    /// Node counts from the leaves up to the roots.
    fn level_sizes(&self) -> Vec<usize> {
        self.inner.level_sizes()
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn fact_count(&self) -> usize {
        self.inner.fact_store.len()
    }

    /// Top-down retrieval; returns a plain dict.
    #[pyo3(signature = (gateway, query, granularity = "summaries"))]
    fn retrieve<'py>(
        &self,
        py: Python<'py>,
        gateway: &PyGateway,
        query: &str,
        granularity: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let rcfg = RetrievalConfig { answer_granularity: self::granularity(granularity)?, ..RetrievalConfig::default() };
        let (gw, tree) = (&gateway.inner, &self.inner);
        let r = py.detach(|| tacitree::retrieve(gw, tree, query, &rcfg)).map_err(backend_err)?;
        let v = serde_json::json!({
            "query": r.query,
            "selected_per_level": r.selected_per_level,
            "used_fallback": r.used_fallback,
            "fact_ids": r.fact_ids(),
            "session_ids": r.session_ids(),
            "retrieved_tokens": r.retrieved_tokens,
            "judge_calls": r.judge_calls,
            "context": r.context(),
        });
        json_to_py(py, &v)
    }

    /// Retrieves context for `query` and answers from it.
    #[pyo3(signature = (gateway, query, granularity = "summaries"))]
    fn answer(&self, py: Python<'_>, gateway: &PyGateway, query: &str, granularity: &str) -> PyResult<String> {
        let rcfg = RetrievalConfig { answer_granularity: self::granularity(granularity)?, ..RetrievalConfig::default() };
        let (gw, tree) = (&gateway.inner, &self.inner);
        py.detach(|| {
            let r = tacitree::retrieve(gw, tree, query, &rcfg).map_err(|e| e.to_string())?;
            answer(gw, query, &r.context()).map_err(|e| e.to_string())
        })
        .map_err(backend_err)
    }

    fn __repr__(&self) -> String {
        format!("MemoryTree(id={:?}, levels={:?})", self.inner.tree_id, self.inner.level_sizes())
    }
}

/// Set F1 between retrieved and gold identifiers.
#[pyfunction]
fn retrieval_f1(retrieved: Vec<String>, gold: Vec<String>) -> f64 {
    let (a, b): (BTreeSet<String>, BTreeSet<String>) = (retrieved.into_iter().collect(), gold.into_iter().collect());
    eval::retrieval_f1(&a, &b)
}

/// One minus the cosine similarity of question and answer embeddings.
#[pyfunction]
fn implicitness_score(py: Python<'_>, gateway: &PyGateway, question: &str, answer: &str) -> PyResult<f64> {
    let gw = &gateway.inner;
    py.detach(|| eval::implicitness_score(gw, question, answer)).map_err(backend_err)
}

/// Builds one benchmark example; returns `{history, tasks, review}`.
#[pyfunction]
#[pyo3(signature = (gateway, personas, seed = None, kind = "both", example_idx = 0, traits_per_example = None, pool_dir = None))]
#[allow(clippy::too_many_arguments)]
fn generate_example<'py>(
    py: Python<'py>,
    gateway: &PyGateway,
    personas: Vec<String>,
    seed: Option<u64>,
    kind: &str,
    example_idx: usize,
    traits_per_example: Option<usize>,
    pool_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let seed = seed.unwrap_or(gateway.seed);
    let mut cfg = ExampleConfig { seed, kind: kind.parse::<KindSelection>().map_err(input_err)?, ..ExampleConfig::default() };
    if let Some(t) = traits_per_example {
        cfg.traits_per_example = t;
    }
    let pool = match pool_dir {
        Some(dir) => corpus::load_pool(&dir).map_err(input_err)?,
        None => corpus::synthetic_pool(3, 120, seed),
    };
    let gw = &gateway.inner;
    let ex = py.detach(|| corpus::generate_example(gw, &personas, &pool, &cfg, example_idx)).map_err(input_err)?;
    let out = json_to_py(py, &serde_json::json!({ "tasks": ex.tasks, "review": ex.review }))?;
    out.set_item("history", PyHistory { inner: Arc::new(ex.history) })?;
    Ok(out)
}

fn task_lines(tasks: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(text) = tasks.extract::<String>() {
        return Ok(text);
    }
    let json = tasks.py().import("json")?;
    let list = tasks.cast::<PyList>().map_err(|_| input_err("tasks must be JSONL text or a list of dicts"))?;
    let mut lines = Vec::with_capacity(list.len());
    for item in list.iter() {
        lines.push(json.call_method1("dumps", (item,))?.extract::<String>()?);
    }
    Ok(lines.join("\n"))
}

/// Scores strategies on tasks; returns the report set as a dict.
#[pyfunction]
#[pyo3(signature = (gateway, history, tasks, tree = None, strategies = "tacitree_summary,tacitree_facts,flat_topk,brute_force,full_context"))]
fn evaluate<'py>(
    py: Python<'py>,
    gateway: &PyGateway,
    history: &PyHistory,
    tasks: &Bound<'py, PyAny>,
    tree: Option<&PyMemoryTree>,
    strategies: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let tasks = corpus::parse_tasks(&task_lines(tasks)?).map_err(input_err)?;
    let strategies: Vec<Strategy> = Strategy::parse_list(strategies).map_err(input_err)?;
    let (gw, h) = (&gateway.inner, &history.inner);
    let tree = tree.map(|t| t.inner.clone());
    let seed = gateway.seed;
    let set = py
        .detach(|| -> Result<ReportSet, cli::CliError> {
            let tree = match tree {
                Some(t) => t,
                None => Arc::new(build_tree_for_history(gw, h, &BuildConfig { seed, ..BuildConfig::default() })?),
            };
            let facts = cli::embedded_facts(gw, &tree)?;
            let ctx = EvalContext { history: h, facts: &facts, tree: Some(&tree) };
            let run_id = format!("{}-seed{seed}", h.history_id);
            let reports = strategies
                .into_iter()
                .map(|s| eval::run_eval(gw, &ctx, &tasks, s, &EvalConfig::default(), &run_id))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ReportSet::new(run_id, reports))
        })
        .map_err(cli_err)?;
    py.import("json")?.call_method1("loads", (set.to_json(),))
}

/// Runs the command-line interface in-process; returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("tacitree".to_string()).chain(args).collect();
    py.detach(|| cli::main_with_args(argv))
}

#[pymodule]
fn tacitree_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("TacitreeError", py.get_type::<TacitreeError>())?;
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("BackendError", py.get_type::<BackendError>())?;
    m.add_class::<PyGateway>()?;
    m.add_class::<PyHistory>()?;
    m.add_class::<PyMemoryTree>()?;
    m.add_function(wrap_pyfunction!(retrieval_f1, m)?)?;
    m.add_function(wrap_pyfunction!(implicitness_score, m)?)?;
    m.add_function(wrap_pyfunction!(generate_example, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn granularity_names() {
        assert_eq!(granularity("facts").unwrap(), Granularity::Facts);
        assert_eq!(granularity("summaries").unwrap(), Granularity::Summaries);
        assert!(granularity("leaves").is_err());
    }

    #[test]
    fn f1_ignores_duplicates_and_order() {
        let f = retrieval_f1(vec!["b".into(), "a".into(), "a".into()], vec!["c".into(), "b".into()]);
        assert_eq!(f, 0.5);
        assert_eq!(retrieval_f1(vec![], vec![]), 1.0);
    }
}
