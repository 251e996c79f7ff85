//! Python bindings: `Graph`, `Task`, `Embeddings`, and `Policy` classes
//! plus `check` / `evaluate` entry points, mirroring the CLI pipeline
//! in-process.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use factpath_core::embedding::{train_embeddings, ComplexEmbedding, EmbedTrainConfig};
use factpath_core::env::Env;
use factpath_core::error::Error;
use factpath_core::eval::evaluate_task;
use factpath_core::kg::{self, KnowledgeGraph, TaskDataset, Triple};
use factpath_core::policy::{
    init_policy, train_policy, PolicyOptimizer, PolicyParams, PolicyTrainConfig,
};
use factpath_core::reasoner::{check_claim, render_path};

fn to_py_err(err: Error) -> PyErr {
    match &err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        e if e.is_input_error() => PyValueError::new_err(err.to_string()),
        Error::ModelFormat { .. } => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

/// An immutable knowledge graph with inverse closure and a self-loop
/// relation.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Graph {
    inner: KnowledgeGraph,
}

#[pymethods]
impl Graph {
    /// Load a `head<TAB>relation<TAB>tail` triple file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Graph {
            inner: KnowledgeGraph::load(path).map_err(to_py_err)?,
        })
    }

    /// Parse triples from a string in the same format.
    #[staticmethod]
    fn from_tsv(text: &str) -> PyResult<Self> {
        Ok(Graph {
            inner: KnowledgeGraph::from_tsv_str(text).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn entity_count(&self) -> usize {
        self.inner.entity_count()
    }

    /// Base + inverse + self-loop.
    #[getter]
    fn relation_count(&self) -> usize {
        self.inner.relation_count()
    }

    #[getter]
    fn base_relation_count(&self) -> usize {
        self.inner.base_relation_count()
    }

    #[getter]
    fn base_fact_count(&self) -> usize {
        self.inner.base_fact_count()
    }

    fn entity_labels(&self) -> Vec<String> {
        self.inner.entity_labels().to_vec()
    }

    fn relation_labels(&self) -> Vec<String> {
        self.inner.relation_labels().to_vec()
    }

    /// Relations usable at an entity (including the self-loop).
    fn valid_actions(&self, entity: &str) -> PyResult<Vec<String>> {
        let id = self.inner.resolve_entity(entity).map_err(to_py_err)?;
        Ok(self
            .inner
            .valid_actions(id)
            .into_iter()
            .map(|r| self.inner.relation_label(r).to_string())
            .collect())
    }

    fn contains(&self, head: &str, relation: &str, tail: &str) -> PyResult<bool> {
        Ok(self.inner.contains(&self.resolve(head, relation, tail)?))
    }

    /// Extract the reasoning task for one query relation: its triples
    /// (and inverses) are removed from the graph and the positives are
    /// split train/test.
    #[pyo3(signature = (relation, split_ratio=0.8, seed=0))]
    fn extract_task(&self, relation: &str, split_ratio: f64, seed: u64) -> PyResult<Task> {
        let id = self.inner.resolve_relation(relation).map_err(to_py_err)?;
        Ok(Task {
            inner: kg::extract_task(&self.inner, id, split_ratio, seed).map_err(to_py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(entities={}, relations={}, facts={})",
            self.inner.entity_count(),
            self.inner.base_relation_count(),
            self.inner.base_fact_count()
        )
    }
}

impl Graph {
    fn resolve(&self, head: &str, relation: &str, tail: &str) -> PyResult<Triple> {
        Ok(Triple::new(
            self.inner.resolve_entity(head).map_err(to_py_err)?,
            self.inner.resolve_relation(relation).map_err(to_py_err)?,
            self.inner.resolve_entity(tail).map_err(to_py_err)?,
        ))
    }
}

/// One reasoning task: claims plus the pruned graph they are judged
/// against.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Task {
    inner: TaskDataset,
}

#[pymethods]
impl Task {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn train_size(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn test_size(&self) -> usize {
        self.inner.test.len()
    }

    /// The task's graph with the query relation removed.
    fn pruned_graph(&self) -> Graph {
        Graph {
            inner: self.inner.pruned_graph.clone(),
        }
    }

    /// Add `ratio` corrupted-tail negatives per positive, drawn from the
    /// tails observed for the same relation in `graph`.
    #[pyo3(signature = (graph, ratio=10, seed=0))]
    fn generate_negatives(&self, graph: &Graph, ratio: u32, seed: u64) -> PyResult<Task> {
        Ok(Task {
            inner: kg::generate_negatives(&self.inner, &graph.inner, ratio, seed)
                .map_err(to_py_err)?,
        })
    }

    /// Test samples as (head, relation, tail, label, true_tail) tuples.
    fn test_samples(&self) -> Vec<(String, String, String, bool, String)> {
        let g = &self.inner.pruned_graph;
        self.inner
            .test
            .iter()
            .map(|s| {
                (
                    g.entity_label(s.claim.head).to_string(),
                    g.relation_label(s.claim.relation).to_string(),
                    g.entity_label(s.claim.tail).to_string(),
                    s.label,
                    g.entity_label(s.true_tail).to_string(),
                )
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Task(name={:?}, train={}, test={})",
            self.inner.name,
            self.inner.train.len(),
            self.inner.test.len()
        )
    }
}

/// Complex-valued entity/relation embeddings with trilinear scoring.
#[pyclass]
struct Embeddings {
    inner: ComplexEmbedding,
}

#[pymethods]
impl Embeddings {
    /// Train on all stored triples of `graph` (typically a task's pruned
    /// graph). Deterministic for a fixed seed.
    #[staticmethod]
    #[pyo3(signature = (graph, dim=20, epochs=1000, batch_size=50, learning_rate=1e-4,
                        l3_strength=1e-5, negatives_per_positive=10, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        graph: &Graph,
        dim: usize,
        epochs: u32,
        batch_size: usize,
        learning_rate: f64,
        l3_strength: f64,
        negatives_per_positive: u32,
        seed: u64,
    ) -> PyResult<Self> {
        let config = EmbedTrainConfig {
            dim,
            epochs,
            batch_size,
            learning_rate,
            l3_strength,
            negatives_per_positive,
            seed,
        };
        Ok(Embeddings {
            inner: train_embeddings(&graph.inner, &config).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Embeddings {
            inner: ComplexEmbedding::load(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn entity_count(&self) -> usize {
        self.inner.entity_count()
    }

    /// Re(< r, e_head, conj(e_tail) >) for a labeled triple.
    fn score(&self, graph: &Graph, head: &str, relation: &str, tail: &str) -> PyResult<f64> {
        let t = graph.resolve(head, relation, tail)?;
        Ok(self.inner.score(t.head, t.relation, t.tail))
    }

    fn __repr__(&self) -> String {
        format!(
            "Embeddings(entities={}, relations={}, dim={})",
            self.inner.entity_count(),
            self.inner.relation_count(),
            self.inner.dim()
        )
    }
}

/// The walk policy: a two-layer softmax network over relation actions.
#[pyclass]
struct Policy {
    inner: PolicyParams,
}

#[pymethods]
impl Policy {
    /// Train with REINFORCE on the task's train split, starting from a
    /// seeded Xavier initialization.
    #[staticmethod]
    #[pyo3(signature = (task, embeddings, episodes=100_000, hidden=128, learning_rate=1e-3,
                        top_k=3, max_steps=3, optimizer="adam", seed=0, progress_every=1000))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        task: &Task,
        embeddings: &Embeddings,
        episodes: u64,
        hidden: usize,
        learning_rate: f64,
        top_k: usize,
        max_steps: usize,
        optimizer: &str,
        seed: u64,
        progress_every: u64,
    ) -> PyResult<(Self, Vec<(u64, f64)>)> {
        let optimizer = match optimizer {
            "adam" => PolicyOptimizer::Adam,
            "sgd" => PolicyOptimizer::Sgd,
            other => {
                return Err(PyValueError::new_err(format!(
                    "optimizer must be 'adam' or 'sgd', got {other:?}"
                )))
            }
        };
        let graph = &task.inner.pruned_graph;
        let env = Env {
            graph,
            emb: &embeddings.inner,
            max_steps,
        };
        let params = init_policy(env.state_dim(), hidden, graph.relation_count(), seed);
        let config = PolicyTrainConfig {
            episodes,
            learning_rate,
            top_k_sampling: top_k,
            seed,
            optimizer,
            progress_every,
        };
        let (params, progress) = train_policy(
            &task.inner,
            params,
            graph,
            &embeddings.inner,
            max_steps,
            &config,
        )
        .map_err(to_py_err)?;
        Ok((
            Policy { inner: params },
            progress
                .into_iter()
                .map(|r| (r.episode, r.avg_reward))
                .collect(),
        ))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Policy {
            inner: PolicyParams::load(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn action_count(&self) -> usize {
        self.inner.action_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy(state_dim={}, hidden={}, actions={})",
            self.inner.state_dim(),
            self.inner.hidden(),
            self.inner.action_count()
        )
    }
}

/// One evidential path backing a verdict.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct PathResult {
    #[pyo3(get)]
    rendered: String,
    #[pyo3(get)]
    final_entity: String,
    #[pyo3(get)]
    weight: f64,
}

#[pymethods]
impl PathResult {
    fn __repr__(&self) -> String {
        format!("PathResult({:?}, weight={:.4})", self.rendered, self.weight)
    }
}

/// Verdict for a single claim.
#[pyclass]
struct VerdictResult {
    #[pyo3(get)]
    label: bool,
    #[pyo3(get)]
    winner: String,
    #[pyo3(get)]
    vote_weights: Vec<(String, f64)>,
    #[pyo3(get)]
    paths: Vec<PathResult>,
}

#[pymethods]
impl VerdictResult {
    fn __repr__(&self) -> String {
        format!(
            "VerdictResult(label={}, winner={:?}, paths={})",
            if self.label { "True" } else { "False" },
            self.winner,
            self.paths.len()
        )
    }
}

/// Check one claim against a graph (typically a task's pruned graph) with
/// beam search and weighted voting.
#[pyfunction]
#[pyo3(signature = (graph, embeddings, policy, head, relation, tail, width=10, max_steps=3))]
#[allow(clippy::too_many_arguments)]
fn check(
    graph: &Graph,
    embeddings: &Embeddings,
    policy: &Policy,
    head: &str,
    relation: &str,
    tail: &str,
    width: usize,
    max_steps: usize,
) -> PyResult<VerdictResult> {
    let claim = graph.resolve(head, relation, tail)?;
    let env = Env {
        graph: &graph.inner,
        emb: &embeddings.inner,
        max_steps,
    };
    let verdict = check_claim(claim, &policy.inner, &env, width).map_err(to_py_err)?;
    let g = &graph.inner;
    Ok(VerdictResult {
        label: verdict.label,
        winner: g.entity_label(verdict.winner).to_string(),
        vote_weights: verdict
            .vote_weights
            .iter()
            .map(|(&e, &w)| (g.entity_label(e).to_string(), w))
            .collect(),
        paths: verdict
            .paths
            .iter()
            .map(|p| PathResult {
                rendered: render_path(p, g),
                final_entity: g.entity_label(p.final_entity).to_string(),
                weight: p.weight,
            })
            .collect(),
    })
}

/// Evaluate a task's test split; returns
/// (hits, hits_positives, voting_accuracy).
#[pyfunction]
#[pyo3(signature = (task, embeddings, policy, width=10, max_steps=3))]
fn evaluate(
    task: &Task,
    embeddings: &Embeddings,
    policy: &Policy,
    width: usize,
    max_steps: usize,
) -> PyResult<(f64, f64, f64)> {
    let (report, _) = evaluate_task(
        &task.inner,
        &policy.inner,
        &embeddings.inner,
        width,
        max_steps,
    )
    .map_err(to_py_err)?;
    Ok((report.hits, report.hits_positives, report.voting_accuracy))
}

#[pymodule]
fn factpath_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Graph>()?;
    m.add_class::<Task>()?;
    m.add_class::<Embeddings>()?;
    m.add_class::<Policy>()?;
    m.add_class::<PathResult>()?;
    m.add_class::<VerdictResult>()?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
