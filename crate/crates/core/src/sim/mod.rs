//! Synthetic worlds and a closed-loop benchmark harness for running the
//! whole loop without a model backend or a real collection.

mod suite;
mod world;

pub use suite::{
    ablation_suite, accumulated_gt_curve, agents_for, dominates, gt_curve, simulate,
    stacked_arms, Arm, ArmComparison, ArmSpec, ArmSummary, OrchestratorPolicy, PolicyConfig,
    SensitivityRow, SimRun, SuiteOptions, SuiteReport, TopicScore,
};
pub use world::{
    cosine_tail, generate_world, rho_for_expected, SimTopic, SyntheticWorld, WorldKind,
    WorldParams,
};

use thiserror::Error;

use crate::agents::AgentError;
use crate::domain::DomainError;
use crate::eval::EvalError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world or policy: {0}")]
    InvalidParams(String),
    #[error("topic {topic} has no candidate with cosine >= {rho:.4} to its intent")]
    Infeasible { topic: String, rho: f64 },
    #[error("the llm policy needs a model backend")]
    NeedsBackend,
    #[error("world spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
