//! Python bindings: synthetic worlds, the retrieval loop, traces, metrics
//! and the model-output parsers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use magent::domain::{CandidateId, EngineConfig};
use magent::eval::{average_precision as ap, Qrels};
use magent::llm_gateway;
use magent::orchestrator::{narrate, RunTrace};
use magent::seeds;
use magent::sim::{
    ablation_suite, generate_world, simulate, stacked_arms, ArmSpec, OrchestratorPolicy,
    PolicyConfig, SuiteOptions, SyntheticWorld, WorldKind, WorldParams,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ids(ranking: Vec<String>) -> PyResult<Vec<CandidateId>> {
    ranking.into_iter().map(|s| CandidateId::new(s).map_err(value_err)).collect()
}

#[pyclass(name = "EngineConfig", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyEngineConfig(EngineConfig);

#[pymethods]
impl PyEngineConfig {
    #[new]
    #[pyo3(signature = (T = 60, k = 50, L = 1000))]
    #[allow(non_snake_case)]
    fn new(T: usize, k: usize, L: usize) -> PyResult<Self> {
        EngineConfig::new(T, k, L).map(Self).map_err(value_err)
    }

    #[getter(T)]
    fn max_iterations(&self) -> usize {
        self.0.max_iterations()
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.examination_length()
    }

    #[getter(L)]
    fn submission_length(&self) -> usize {
        self.0.submission_length()
    }

    fn __repr__(&self) -> String {
        format!(
            "EngineConfig(T={}, k={}, L={})",
            self.0.max_iterations(),
            self.0.examination_length(),
            self.0.submission_length()
        )
    }
}

/// One topic's finished run.
#[pyclass(name = "Trace", frozen)]
struct PyTrace(RunTrace);

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RunTrace::from_json(text).map(Self).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[pyo3(signature = (iteration = None))]
    fn narrate(&self, iteration: Option<usize>) -> String {
        narrate(&self.0, iteration)
    }

    #[getter]
    fn topic(&self) -> &str {
        &self.0.topic
    }

    #[getter]
    fn termination(&self) -> String {
        serde_json::to_value(self.0.termination)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations.len()
    }

    /// Action taken after each iteration; `None` on the one that filled the
    /// submission.
    #[getter]
    fn actions(&self) -> Vec<Option<String>> {
        self.0
            .iterations
            .iter()
            .map(|r| r.action.map(|a| a.as_str().to_string()))
            .collect()
    }

    #[getter]
    fn precisions(&self) -> Vec<f64> {
        self.0.iterations.iter().map(|r| r.precision).collect()
    }

    #[getter]
    fn submission(&self) -> Vec<String> {
        self.0.submission.ids().map(|c| c.as_str().to_string()).collect()
    }

    #[getter]
    fn matched(&self) -> usize {
        self.0.submission.matched_len()
    }
}

fn policy(name: &str, tau: f64, alpha: f64, tpr: f64, fpr: f64) -> PyResult<PolicyConfig> {
    let orchestrator = match name {
        "threshold" => OrchestratorPolicy::Threshold { tau },
        "exploit" => OrchestratorPolicy::AlwaysExploit,
        "explore" => OrchestratorPolicy::AlwaysExplore,
        other => return Err(value_err(format!("unknown policy {other:?}"))),
    };
    Ok(PolicyConfig {
        orchestrator,
        alpha,
        tpr,
        fpr,
    })
}

/// A generated corpus with topics and complete judgments.
#[pyclass(name = "World", frozen)]
struct PyWorld(SyntheticWorld);

#[pymethods]
impl PyWorld {
    #[staticmethod]
    #[pyo3(signature = (kind = "standard", dimension = 64, corpus_size = 10_000, topics = 30, expected_relevant = 100.0, drift = 1.0, seed = 0))]
    fn generate(
        py: Python<'_>,
        kind: &str,
        dimension: usize,
        corpus_size: usize,
        topics: usize,
        expected_relevant: f64,
        drift: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let kind = match kind {
            "standard" => WorldKind::Standard,
            "two_cluster" => WorldKind::TwoCluster,
            other => return Err(value_err(format!("unknown world kind {other:?}"))),
        };
        let params = WorldParams {
            kind,
            dimension,
            corpus_size,
            topics,
            expected_relevant,
            drift,
            seed,
            ..WorldParams::default()
        };
        py.detach(|| generate_world(&params)).map(Self).map_err(value_err)
    }

    /// From a `key = value` world spec.
    #[staticmethod]
    fn from_spec(py: Python<'_>, text: &str) -> PyResult<Self> {
        let params = WorldParams::parse(text).map_err(value_err)?;
        py.detach(|| generate_world(&params)).map(Self).map_err(value_err)
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }

    #[getter]
    fn topic_ids(&self) -> Vec<String> {
        self.0.topics.iter().map(|t| t.id.clone()).collect()
    }

    #[getter]
    fn corpus_size(&self) -> usize {
        self.0.index.len()
    }

    fn relevant_counts(&self) -> Vec<usize> {
        self.0.relevant_counts()
    }

    fn qrels(&self) -> String {
        self.0.qrels.to_trec_string()
    }

    fn average_precision(&self, topic: &str, ranking: Vec<String>) -> PyResult<f64> {
        ap(&ids(ranking)?, &self.0.qrels, topic).map_err(value_err)
    }

    /// Runs the loop on every topic with a simulated judge and policy.
    #[pyo3(signature = (policy_name = "threshold", config = None, tau = 0.2, alpha = 0.5, tpr = 1.0, fpr = 0.0, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        py: Python<'_>,
        policy_name: &str,
        config: Option<PyEngineConfig>,
        tau: f64,
        alpha: f64,
        tpr: f64,
        fpr: f64,
        seed: u64,
    ) -> PyResult<Vec<PyTrace>> {
        let arm = ArmSpec::looped(policy_name, policy(policy_name, tau, alpha, tpr, fpr)?);
        let config = config.map_or_else(EngineConfig::default, |c| c.0);
        let runs = py
            .detach(|| simulate(&self.0, &arm, config, seeds::derive(seed, "policy"), None))
            .map_err(value_err)?;
        Ok(runs.into_iter().filter_map(|r| r.trace).map(PyTrace).collect())
    }
}

/// Stacked ablation arms and the (T, k) grid; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (spec, seeds, config = None, tpr = 1.0, fpr = 0.0, parallelism = 1))]
fn ablation(
    py: Python<'_>,
    spec: &str,
    seeds: Vec<u64>,
    config: Option<PyEngineConfig>,
    tpr: f64,
    fpr: f64,
    parallelism: usize,
) -> PyResult<String> {
    let params = WorldParams::parse(spec).map_err(value_err)?;
    let base = PolicyConfig {
        tpr,
        fpr,
        ..PolicyConfig::default()
    };
    let options = SuiteOptions {
        config: config.map_or_else(EngineConfig::default, |c| c.0),
        parallelism,
        ..SuiteOptions::default()
    };
    py.detach(|| ablation_suite(&params, &stacked_arms(&base), &seeds, &options))
        .map(|r| r.to_json())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// AP of `ranking` for `topic` against TREC-format qrels text.
#[pyfunction]
fn average_precision(ranking: Vec<String>, qrels: &str, topic: &str) -> PyResult<f64> {
    let qrels = Qrels::parse(qrels).map_err(value_err)?;
    ap(&ids(ranking)?, &qrels, topic).map_err(value_err)
}

/// `(action, reasoning)` from an orchestrator reply.
#[pyfunction]
fn parse_action(raw: &str) -> PyResult<(String, String)> {
    let a = llm_gateway::parse_action(raw).map_err(value_err)?;
    Ok((a.kind.as_str().to_string(), a.reasoning))
}

/// `(matched, reasoning)` from a judge reply.
#[pyfunction]
#[pyo3(signature = (raw, with_reasoning = false))]
fn parse_verdict(raw: &str, with_reasoning: bool) -> PyResult<(bool, Option<String>)> {
    let v = llm_gateway::parse_verdict(raw, with_reasoning).map_err(value_err)?;
    Ok((v.matched, v.reasoning))
}

/// `(query, reasoning)` from a reformulation reply.
#[pyfunction]
fn parse_reformulation(raw: &str) -> PyResult<(String, Option<String>)> {
    let r = llm_gateway::parse_reformulation(raw).map_err(value_err)?;
    Ok((r.text, r.reasoning))
}

#[pymodule]
fn magent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngineConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyWorld>()?;
    m.add_function(wrap_pyfunction!(ablation, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(parse_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(parse_reformulation, m)?)?;
    Ok(())
}
