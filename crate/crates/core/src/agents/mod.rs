//! The four agent roles and their implementations.
//!
//! Each role is its own trait so ablations can swap one without touching
//! the others: retrieval ranks the unexamined corpus, reasoning judges
//! candidates, reformulation proposes a new query, and orchestration picks
//! between exploiting the current query and exploring a new one.
//!
//! Every implementation is `Send + Sync`; one instance serves many topics
//! concurrently.

mod corpus;
mod llm;
mod retrieval;
mod simulated;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{CorpusIndex, CorpusError, MATRIX_MAGIC, MATRIX_VERSION};
pub use llm::{
    uniform_sample, HttpEncoder, LlmOrchestrator, LlmReasoner, LlmReformulator, VideoEvidence,
    VideoLocator, PARSE_FAILURE_DEFAULT,
};
pub use retrieval::{dot, normalize, ExactRetriever, LookupEncoder, QueryEncoder};
pub use simulated::{
    CentroidNudge, FixedPolicy, NoisyReasoner, OracleReasoner, ThresholdOrchestrator,
};

use crate::domain::{
    Action, CandidateId, DomainError, EvalSummary, ExclusionSet, MemoryBank, Query, RankedEntry,
    RankedList,
};
use crate::llm_gateway::{GatewayError, ParseFailure};

/// Reasoning string recorded for a candidate whose judgment call failed.
pub const BACKEND_ERROR_REASONING: &str = "backend-error";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error("reformulation repeated the previous query")]
    DuplicateReformulation,
    #[error("query `{0}` has no embedding and no encoder is configured")]
    MissingEmbedding(String),
    #[error("vector dimension {got} does not match corpus dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown candidate {0}")]
    UnknownCandidate(CandidateId),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{0}")]
    Backend(String),
}

/// Counters for backend calls made on behalf of one iteration.
#[derive(Debug, Default)]
pub struct UsageMeter {
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    latency_ms: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl UsageMeter {
    pub fn record(&self, prompt_tokens: u64, completion_tokens: u64, latency_ms: u64) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(completion_tokens, Ordering::Relaxed);
        self.latency_ms.fetch_add(latency_ms, Ordering::Relaxed);
    }

    /// Returns the totals so far and resets them.
    pub fn take(&self) -> Usage {
        Usage {
            calls: self.calls.swap(0, Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.swap(0, Ordering::Relaxed),
            completion_tokens: self.completion_tokens.swap(0, Ordering::Relaxed),
            latency_ms: self.latency_ms.swap(0, Ordering::Relaxed),
        }
    }
}

/// Per-call context handed to every agent.
pub struct AgentContext<'a> {
    pub topic: &'a str,
    pub usage: &'a UsageMeter,
}

impl<'a> AgentContext<'a> {
    pub fn new(topic: &'a str, usage: &'a UsageMeter) -> Self {
        Self { topic, usage }
    }
}

pub trait RetrievalAgent: Send + Sync {
    /// Top-`limit` unexcluded candidates by descending similarity.
    fn retrieve(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        excluded: &ExclusionSet,
        limit: usize,
    ) -> Result<RankedList, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate: CandidateId,
    pub matched: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

pub trait ReasoningAgent: Send + Sync {
    fn judge_candidate(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        candidate: &RankedEntry,
    ) -> Result<Verdict, AgentError>;
}

/// Everything the reformulation agent may consult.
pub struct ReformulationRequest<'a> {
    pub original: &'a Query,
    pub previous: &'a Query,
    pub memory: &'a MemoryBank,
    pub decision_reasoning: &'a str,
    /// Candidates judged matched so far in this run, in submission order.
    pub matched_so_far: &'a [CandidateId],
    /// The most recently examined slice.
    pub last_examined: &'a [RankedEntry],
}

pub trait ReformulationAgent: Send + Sync {
    /// A new query differing from `request.previous`, or
    /// [`AgentError::DuplicateReformulation`].
    fn reformulate(
        &self,
        ctx: &AgentContext<'_>,
        request: &ReformulationRequest<'_>,
    ) -> Result<Query, AgentError>;
}

pub trait OrchestrationAgent: Send + Sync {
    fn decide(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        summary: &EvalSummary,
    ) -> Result<Action, AgentError>;
}

/// Split of one examined slice, both halves in ranked order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub matched: Vec<CandidateId>,
    pub unmatched: Vec<CandidateId>,
    pub verdicts: Vec<Verdict>,
}

/// Judges every candidate of `slice`, up to `parallelism` at a time.
///
/// A candidate whose call fails twice is recorded as unmatched with
/// [`BACKEND_ERROR_REASONING`]. Output order always follows `slice`.
pub fn judge(
    agent: &dyn ReasoningAgent,
    ctx: &AgentContext<'_>,
    query: &Query,
    slice: &[RankedEntry],
    parallelism: usize,
) -> Judgment {
    let one = |c: &RankedEntry| -> Verdict {
        agent
            .judge_candidate(ctx, query, c)
            .or_else(|_| agent.judge_candidate(ctx, query, c))
            .unwrap_or_else(|err| {
                tracing::warn!(topic = ctx.topic, candidate = %c.id, %err, "judgment failed");
                Verdict {
                    candidate: c.id.clone(),
                    matched: false,
                    reasoning: Some(BACKEND_ERROR_REASONING.to_string()),
                }
            })
    };

    let verdicts: Vec<Verdict> = if parallelism <= 1 || slice.len() <= 1 {
        slice.iter().map(one).collect()
    } else {
        let chunk = slice.len().div_ceil(parallelism);
        std::thread::scope(|scope| {
            let handles: Vec<_> = slice
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("judge worker panicked"))
                .collect()
        })
    };

    let mut out = Judgment::default();
    for (v, c) in verdicts.into_iter().zip(slice) {
        // An agent reporting on a different candidate is treated as a failure.
        let v = if v.candidate == c.id {
            v
        } else {
            Verdict {
                candidate: c.id.clone(),
                matched: false,
                reasoning: Some(BACKEND_ERROR_REASONING.to_string()),
            }
        };
        if v.matched {
            out.matched.push(v.candidate.clone());
        } else {
            out.unmatched.push(v.candidate.clone());
        }
        out.verdicts.push(v);
    }
    out
}
