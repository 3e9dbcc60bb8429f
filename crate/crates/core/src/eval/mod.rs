//! Retrieval evaluation: exact and inferred average precision, TREC-format
//! qrels and run files, and multi-run comparison reports.

mod compare;
mod metrics;
mod qrels;
mod run;

pub use compare::{
    compare_runs, paired_randomization_test, score_runs, EvaluationReport, Metric,
    PairComparison,
};
pub use metrics::{
    aggregate_sets, average_precision, inferred_ap, mean_score, SamplingRates, SetAggregate,
};
pub use qrels::{Judgment, Qrels, QrelsRecord};
pub use run::{RunEntry, RunFile};

use thiserror::Error;

use crate::domain::{CandidateId, DomainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate judgment for topic {topic}, candidate {candidate}")]
    DuplicateJudgment { topic: String, candidate: CandidateId },
    #[error("candidate {candidate} appears twice in the ranking for topic {topic}")]
    DuplicateInRanking { topic: String, candidate: CandidateId },
    #[error("sampling rate for stratum {stratum} must be in (0, 1], got {rate}")]
    InvalidSamplingRate { stratum: String, rate: f64 },
    #[error("no sampling rate given for stratum {0}")]
    MissingStratumRate(String),
    #[error("cannot average an empty set of scores")]
    EmptyScores,
    #[error("runs share no topics with each other and the qrels")]
    DisjointTopics,
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("topic {topic} has {len} entries, more than the limit {limit}")]
    TooLong { topic: String, len: usize, limit: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
