//! The per-topic retrieve / judge / decide loop and its batch driver.

mod trace;

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

pub use trace::{
    narrate, IterationRecord, JsonlTraceWriter, NullSink, RunTrace, Termination, TraceError,
    TraceSink,
};

use crate::agents::{
    judge, AgentContext, AgentError, OrchestrationAgent, ReasoningAgent, ReformulationAgent,
    ReformulationRequest, RetrievalAgent, UsageMeter,
};
use crate::domain::{
    Action, ActionKind, CandidateId, DomainError, EngineConfig, EvalSummary, ExaminationWindow,
    ExclusionSet, MemoryBank, MemoryEntry, Query, RankedEntry, RankedList, SubmissionList,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("no topics to run")]
    NoTopics,
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One implementation per agent role.
#[derive(Clone)]
pub struct AgentSet {
    pub retrieval: Arc<dyn RetrievalAgent>,
    pub reasoning: Arc<dyn ReasoningAgent>,
    pub reformulation: Arc<dyn ReformulationAgent>,
    pub orchestration: Arc<dyn OrchestrationAgent>,
}

/// Everything needed to run one topic.
#[derive(Clone)]
pub struct TopicRun {
    pub topic: String,
    pub query: Query,
    pub config: EngineConfig,
    pub agents: AgentSet,
    /// Concurrent judgment calls within one slice.
    pub judge_parallelism: usize,
}

impl TopicRun {
    pub fn new(topic: impl Into<String>, query: Query, config: EngineConfig, agents: AgentSet) -> Self {
        Self {
            topic: topic.into(),
            query,
            config,
            agents,
            judge_parallelism: 1,
        }
    }

    pub fn with_judge_parallelism(mut self, n: usize) -> Self {
        self.judge_parallelism = n.max(1);
        self
    }
}

/// Adds the examined slice to the exclusion set, failing on any repeat.
pub fn update_search_space(
    space: &ExclusionSet,
    examined: &[RankedEntry],
) -> Result<ExclusionSet, DomainError> {
    let mut next = space.clone();
    next.exclude(examined)?;
    Ok(next)
}

/// Fills a short submission from `last_list`, best first, skipping anything
/// examined or already submitted.
pub fn finalize_submission(
    y: &SubmissionList,
    last_list: &RankedList,
    excluded: &ExclusionSet,
    limit: usize,
) -> SubmissionList {
    let mut out = y.clone();
    let need = limit.min(out.capacity()).saturating_sub(out.len());
    if need > 0 {
        let fill: Vec<CandidateId> = last_list
            .ids()
            .filter(|id| !excluded.contains(id) && !out.contains(id))
            .take(need)
            .cloned()
            .collect();
        out.append_padding(&fill)
            .expect("padding ids are unique and unsubmitted");
    }
    out
}

/// Runs `f`, and once more if it fails with anything but a duplicate
/// reformulation.
fn with_retry<T>(mut f: impl FnMut() -> Result<T, AgentError>) -> Result<T, AgentError> {
    match f() {
        Err(AgentError::DuplicateReformulation) => Err(AgentError::DuplicateReformulation),
        Err(first) => {
            tracing::debug!(%first, "agent call failed, retrying");
            f()
        }
        ok => ok,
    }
}

struct LoopState {
    iterations: Vec<IterationRecord>,
    memory: MemoryBank,
    submission: SubmissionList,
    excluded: ExclusionSet,
    last_list: RankedList,
}

pub fn run_topic(run: &TopicRun) -> RunTrace {
    run_topic_with_sink(run, &mut NullSink)
}

/// Runs one topic, streaming each iteration record to `sink`.
pub fn run_topic_with_sink(run: &TopicRun, sink: &mut dyn TraceSink) -> RunTrace {
    sink.begin(&run.topic, &run.query, &run.config);
    let mut state = LoopState {
        iterations: Vec::new(),
        memory: MemoryBank::new(),
        submission: SubmissionList::new(run.config.submission_length())
            .expect("config L is at least 1"),
        excluded: ExclusionSet::new(),
        last_list: RankedList::empty(),
    };
    let (termination, error) = match drive(run, &mut state, sink) {
        Ok(t) => (t, None),
        Err(e) => {
            tracing::warn!(topic = %run.topic, error = %e, "topic failed");
            (Termination::Failed, Some(e.to_string()))
        }
    };
    let submission = finalize_submission(
        &state.submission,
        &state.last_list,
        &state.excluded,
        run.config.submission_length(),
    );
    let trace = RunTrace {
        topic: run.topic.clone(),
        original_query: run.query.without_embedding(),
        config: run.config,
        iterations: state.iterations,
        submission,
        memory: state.memory,
        termination,
        error,
    };
    sink.finish(&trace);
    trace
}

fn drive(run: &TopicRun, s: &mut LoopState, sink: &mut dyn TraceSink) -> Result<Termination, AgentError> {
    let (t_max, k, l) = (
        run.config.max_iterations(),
        run.config.examination_length(),
        run.config.submission_length(),
    );
    let agents = &run.agents;
    let usage = UsageMeter::default();
    let ctx = AgentContext::new(&run.topic, &usage);
    let q0 = &run.query;
    let limit = |y: &SubmissionList| k.max(l - y.len().min(l));

    let mut query = q0.clone();
    let mut window = ExaminationWindow::reset(k)?;
    s.last_list = with_retry(|| agents.retrieval.retrieve(&ctx, &query, &s.excluded, limit(&s.submission)))?;

    for t in 0..t_max {
        let slice: Vec<RankedEntry> = s.last_list.head(k).to_vec();
        if slice.is_empty() {
            return Ok(Termination::CorpusExhausted);
        }
        // Relevance is always to the user's original intent.
        let judgment = judge(agents.reasoning.as_ref(), &ctx, q0, &slice, run.judge_parallelism);
        let summary = EvalSummary::new(judgment.matched.len(), judgment.unmatched.len())?;
        s.excluded.exclude(&slice)?;
        let entry = MemoryEntry::new(t, query.clone(), summary, window);
        let precision = entry.precision();
        s.memory.update(entry)?;
        s.submission.append_matched(&judgment.matched)?;

        let mut record = IterationRecord {
            iteration: t,
            query: query.without_embedding(),
            window,
            summary,
            precision,
            matched: judgment.matched,
            unmatched: judgment.unmatched,
            action: None,
            reasoning: None,
            downgraded: false,
            reformulation: None,
            verdicts: judgment
                .verdicts
                .into_iter()
                .filter(|v| v.reasoning.is_some())
                .collect(),
            usage: Default::default(),
        };

        if s.submission.len() >= l {
            record.usage = usage.take();
            sink.record(&record);
            s.iterations.push(record);
            return Ok(Termination::ReachedL);
        }

        let step = step(run, &ctx, &query, &summary, s, &slice);
        let (action, next_query, downgraded) = match step {
            Ok(v) => v,
            Err(e) => {
                record.usage = usage.take();
                sink.record(&record);
                s.iterations.push(record);
                return Err(e);
            }
        };
        record.action = Some(action.kind);
        record.reasoning = Some(action.reasoning);
        record.downgraded = downgraded;
        match next_query {
            Some(q) => {
                record.reformulation = Some(q.without_embedding());
                query = q;
                window = ExaminationWindow::reset(k)?;
            }
            None => window = window.advance(k),
        }

        let retrieved =
            with_retry(|| agents.retrieval.retrieve(&ctx, &query, &s.excluded, limit(&s.submission)));
        record.usage = usage.take();
        sink.record(&record);
        s.iterations.push(record);
        s.last_list = retrieved?;
    }
    Ok(Termination::ExhaustedT)
}

/// Decides, and on explore reformulates. Returns the action actually taken,
/// the new query if any, and whether an explore was downgraded.
fn step(
    run: &TopicRun,
    ctx: &AgentContext<'_>,
    query: &Query,
    summary: &EvalSummary,
    s: &LoopState,
    slice: &[RankedEntry],
) -> Result<(Action, Option<Query>, bool), AgentError> {
    let agents = &run.agents;
    let action = with_retry(|| agents.orchestration.decide(ctx, query, summary))?;
    if action.kind == ActionKind::Exploit {
        return Ok((action, None, false));
    }
    let matched_so_far: Vec<CandidateId> = s
        .submission
        .entries()
        .iter()
        .map(|e| e.id.clone())
        .collect();
    let request = ReformulationRequest {
        original: &run.query,
        previous: query,
        memory: &s.memory,
        decision_reasoning: &action.reasoning,
        matched_so_far: &matched_so_far,
        last_examined: slice,
    };
    match with_retry(|| agents.reformulation.reformulate(ctx, &request)) {
        Ok(q) if q.text() == query.text() && q.embedding() == query.embedding() => {
            Ok((Action::new(ActionKind::Exploit, action.reasoning), None, true))
        }
        Ok(q) => Ok((action, Some(q), false)),
        Err(AgentError::DuplicateReformulation) => {
            Ok((Action::new(ActionKind::Exploit, action.reasoning), None, true))
        }
        Err(e) => Err(e),
    }
}

/// Runs every topic with up to `parallelism` topics in flight. Output order
/// follows input order; each trace is identical to a sequential run.
pub fn run_batch(runs: &[TopicRun], parallelism: usize) -> Result<Vec<RunTrace>, OrchestratorError> {
    run_batch_with_sinks(runs, parallelism, &|_| Box::new(NullSink))
}

pub fn run_batch_with_sinks(
    runs: &[TopicRun],
    parallelism: usize,
    sink_for: &(dyn Fn(&TopicRun) -> Box<dyn TraceSink> + Sync),
) -> Result<Vec<RunTrace>, OrchestratorError> {
    if parallelism == 0 {
        return Err(OrchestratorError::ZeroParallelism);
    }
    if runs.is_empty() {
        return Err(OrchestratorError::NoTopics);
    }
    let one = |run: &TopicRun| {
        let mut sink = sink_for(run);
        run_topic_with_sink(run, sink.as_mut())
    };
    if parallelism == 1 {
        return Ok(runs.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| OrchestratorError::Pool(e.to_string()))?;
    Ok(pool.install(|| runs.par_iter().map(one).collect()))
}

#[cfg(test)]
mod tests;
