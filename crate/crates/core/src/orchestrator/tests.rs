use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::agents::{
    CentroidNudge, CorpusIndex, ExactRetriever, FixedPolicy, OracleReasoner,
    ThresholdOrchestrator, Verdict,
};
use crate::domain::Provenance;
use crate::eval::Qrels;

fn id(s: &str) -> CandidateId {
    CandidateId::new(s).unwrap()
}

/// `n` candidates on the unit circle; the first `relevant` sit nearest +x.
/// Query +x ranks them by index.
fn fan(n: usize, relevant: usize) -> (Arc<CorpusIndex>, Arc<Qrels>) {
    let mut ids = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(2 * n);
    let mut qrels = Qrels::new();
    for i in 0..n {
        let c = id(&format!("c{i:05}"));
        let angle = (i as f64 + 1.0) / (n as f64 + 1.0) * std::f64::consts::PI;
        vectors.extend([angle.cos() as f32, angle.sin() as f32]);
        qrels.judge("t", c.clone(), i < relevant).unwrap();
        ids.push(c);
    }
    (
        Arc::new(CorpusIndex::normalized(ids, 2, vectors).unwrap()),
        Arc::new(qrels),
    )
}

fn agents(
    index: &Arc<CorpusIndex>,
    truth: &Arc<Qrels>,
    orchestration: Arc<dyn OrchestrationAgent>,
) -> AgentSet {
    AgentSet {
        retrieval: Arc::new(ExactRetriever::new(index.clone())),
        reasoning: Arc::new(OracleReasoner::new(truth.clone())),
        reformulation: Arc::new(CentroidNudge::new(index.clone(), 0.5).unwrap()),
        orchestration,
    }
}

fn q0() -> Query {
    Query::original("find it").unwrap().with_embedding(vec![1.0, 0.0])
}

#[test]
fn oracle_fixture_reaches_l_in_twenty_iterations() {
    let (index, truth) = fan(3000, 1200);
    let run = TopicRun::new(
        "t",
        q0(),
        EngineConfig::default(),
        agents(&index, &truth, Arc::new(ThresholdOrchestrator::new(0.2).unwrap())),
    );
    let trace = run_topic(&run);
    assert_eq!(trace.termination, Termination::ReachedL);
    assert_eq!(trace.iterations.len(), 20);
    assert_eq!(trace.submission.len(), 1000);
    assert!(trace
        .submission
        .entries()
        .iter()
        .all(|e| e.provenance == Provenance::Matched));
    assert!(trace.iterations[..19]
        .iter()
        .all(|r| r.action == Some(ActionKind::Exploit)));
    assert_eq!(trace.iterations[19].action, None);
    assert_eq!(trace.memory.len(), 20);
}

struct NeverMatch;

impl ReasoningAgent for NeverMatch {
    fn judge_candidate(
        &self,
        _: &AgentContext<'_>,
        _: &Query,
        c: &RankedEntry,
    ) -> Result<Verdict, AgentError> {
        Ok(Verdict {
            candidate: c.id.clone(),
            matched: false,
            reasoning: None,
        })
    }
}

#[test]
fn zero_precision_run_examines_t_times_k() {
    let (index, truth) = fan(1000, 10);
    let mut set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Exploit)));
    set.reasoning = Arc::new(NeverMatch);
    let config = EngineConfig::new(6, 50, 1000).unwrap();
    let trace = run_topic(&TopicRun::new("t", q0(), config, set));
    assert_eq!(trace.termination, Termination::ExhaustedT);
    assert_eq!(trace.iterations.len(), 6);
    assert_eq!(trace.submission.matched_len(), 0);
    let examined: std::collections::HashSet<_> = trace
        .iterations
        .iter()
        .flat_map(|r| r.unmatched.iter())
        .collect();
    assert_eq!(examined.len(), 300);
    // Padding fills from the last ranking, after everything examined.
    assert_eq!(trace.submission.len(), 700);
    assert!(trace.submission.ids().all(|c| !examined.contains(c)));
}

#[test]
fn exploit_chunks_concatenate_to_initial_ranking() {
    let (index, truth) = fan(800, 300);
    let config = EngineConfig::new(7, 40, 1000).unwrap();
    let set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Exploit)));
    let trace = run_topic(&TopicRun::new("t", q0(), config, set));
    let initial = ExactRetriever::new(index.clone()).search(&[1.0, 0.0], &ExclusionSet::new(), 280);
    let mut examined: Vec<(usize, CandidateId)> = Vec::new();
    for r in &trace.iterations {
        assert_eq!(r.window.start(), r.iteration * 40);
        for c in r.matched.iter().chain(&r.unmatched) {
            examined.push((initial.ids().position(|x| x == c).unwrap(), c.clone()));
        }
    }
    examined.sort();
    let got: Vec<_> = examined.into_iter().map(|(_, c)| c).collect();
    let want: Vec<_> = initial.ids().cloned().collect();
    assert_eq!(got, want);
}

#[test]
fn explore_resets_window_and_changes_query() {
    let (index, truth) = fan(2000, 30);
    let config = EngineConfig::new(5, 50, 1000).unwrap();
    let set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Explore)));
    let trace = run_topic(&TopicRun::new("t", q0(), config, set));
    for pair in trace.iterations.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert_eq!(a.action, Some(ActionKind::Explore));
        assert_eq!(b.window, ExaminationWindow::reset(50).unwrap());
        assert_ne!(a.query.text(), b.query.text());
        assert_eq!(a.reformulation.as_ref().map(Query::text), Some(b.query.text()));
    }
}

struct Stubborn;

impl ReformulationAgent for Stubborn {
    fn reformulate(
        &self,
        _: &AgentContext<'_>,
        _: &ReformulationRequest<'_>,
    ) -> Result<Query, AgentError> {
        Err(AgentError::DuplicateReformulation)
    }
}

#[test]
fn duplicate_reformulation_downgrades_to_exploit() {
    let (index, truth) = fan(500, 10);
    let mut set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Explore)));
    set.reformulation = Arc::new(Stubborn);
    let config = EngineConfig::new(3, 50, 1000).unwrap();
    let trace = run_topic(&TopicRun::new("t", q0(), config, set));
    assert_eq!(trace.termination, Termination::ExhaustedT);
    for r in &trace.iterations {
        assert!(r.downgraded);
        assert_eq!(r.action, Some(ActionKind::Exploit));
        assert_eq!(r.requested_action(), Some(ActionKind::Explore));
        assert_eq!(r.window.start(), r.iteration * 50);
    }
}

#[test]
fn small_corpus_runs_out() {
    let (index, truth) = fan(120, 5);
    let set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Exploit)));
    let trace = run_topic(&TopicRun::new("t", q0(), EngineConfig::default(), set));
    assert_eq!(trace.termination, Termination::CorpusExhausted);
    let sizes: Vec<_> = trace.iterations.iter().map(|r| r.summary.examined()).collect();
    assert_eq!(sizes, [50, 50, 20]);
    assert_eq!(trace.submission.len(), 5);
}

struct FailAfter {
    calls: AtomicUsize,
    ok: usize,
    inner: ExactRetriever,
}

impl RetrievalAgent for FailAfter {
    fn retrieve(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        excluded: &ExclusionSet,
        limit: usize,
    ) -> Result<RankedList, AgentError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok {
            return Err(AgentError::Backend("index offline".into()));
        }
        self.inner.retrieve(ctx, query, excluded, limit)
    }
}

#[test]
fn hard_failure_keeps_partial_trace() {
    let (index, truth) = fan(1000, 10);
    let mut set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Exploit)));
    set.retrieval = Arc::new(FailAfter {
        calls: AtomicUsize::new(0),
        ok: 3,
        inner: ExactRetriever::new(index.clone()),
    });
    let trace = run_topic(&TopicRun::new("t", q0(), EngineConfig::default(), set));
    assert_eq!(trace.termination, Termination::Failed);
    assert!(trace.error.as_deref().unwrap().contains("index offline"));
    assert_eq!(trace.iterations.len(), 3);
    assert_eq!(trace.memory.len(), 3);
}

#[test]
fn transient_failure_is_retried() {
    struct Flaky(AtomicUsize, ExactRetriever);
    impl RetrievalAgent for Flaky {
        fn retrieve(
            &self,
            ctx: &AgentContext<'_>,
            query: &Query,
            excluded: &ExclusionSet,
            limit: usize,
        ) -> Result<RankedList, AgentError> {
            if self.0.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
                return Err(AgentError::Backend("blip".into()));
            }
            self.1.retrieve(ctx, query, excluded, limit)
        }
    }
    let (index, truth) = fan(1000, 10);
    let mut set = agents(&index, &truth, Arc::new(FixedPolicy(ActionKind::Exploit)));
    set.retrieval = Arc::new(Flaky(AtomicUsize::new(0), ExactRetriever::new(index.clone())));
    let config = EngineConfig::new(4, 50, 1000).unwrap();
    let trace = run_topic(&TopicRun::new("t", q0(), config, set));
    assert_eq!(trace.termination, Termination::ExhaustedT);
}

#[test]
fn search_space_update_examples() {
    let e = |s: &str| RankedEntry::new(id(s), 0.0);
    let s1 = update_search_space(&ExclusionSet::new(), &[e("a"), e("b")]).unwrap();
    assert!(s1.contains(&id("a")) && s1.contains(&id("b")) && s1.len() == 2);
    let a = update_search_space(&ExclusionSet::new(), &[e("a")]).unwrap();
    let s2 = update_search_space(&a, &[e("b"), e("c")]).unwrap();
    assert_eq!(s2.len(), 3);
    assert!(update_search_space(&a, &[e("a")]).is_err());
}

#[test]
fn finalize_examples() {
    let ranked = |names: &[&str]| {
        RankedList::from_scored(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| RankedEntry::new(id(n), 1.0 - i as f64 * 0.1))
                .collect(),
        )
        .unwrap()
    };
    let mut full = SubmissionList::new(3).unwrap();
    full.append_matched(&[id("a"), id("b"), id("c")]).unwrap();
    assert_eq!(
        finalize_submission(&full, &ranked(&["x"]), &ExclusionSet::new(), 3),
        full
    );

    let mut short = SubmissionList::new(5).unwrap();
    short.append_matched(&[id("a"), id("b"), id("c")]).unwrap();
    let last = ranked(&["p1", "p2", "p3", "p4", "p5"]);
    let out = finalize_submission(&short, &last, &ExclusionSet::new(), 5);
    let got: Vec<_> = out.ids().map(|c| c.as_str()).collect();
    assert_eq!(got, ["a", "b", "c", "p1", "p2"]);
    assert_eq!(out.entries()[3].provenance, Provenance::Padding);

    let empty = SubmissionList::new(4).unwrap();
    assert!(finalize_submission(&empty, &RankedList::empty(), &ExclusionSet::new(), 4).is_empty());
}

fn batch(n: usize) -> Vec<TopicRun> {
    let (index, truth) = fan(1500, 200);
    (0..n)
        .map(|i| {
            let angle = i as f32 * 0.05;
            let q = Query::original(format!("topic {i}"))
                .unwrap()
                .with_embedding(vec![angle.cos(), angle.sin()]);
            let config = EngineConfig::new(8, 50, 300).unwrap();
            TopicRun::new(
                "t",
                q,
                config,
                agents(&index, &truth, Arc::new(ThresholdOrchestrator::new(0.5).unwrap())),
            )
        })
        .collect()
}

#[test]
fn batch_is_order_preserving_and_parallel_safe() {
    let runs = batch(30);
    let seq = run_batch(&runs, 1).unwrap();
    let par = run_batch(&runs, 4).unwrap();
    assert_eq!(seq.len(), 30);
    assert_eq!(
        serde_json::to_string(&seq).unwrap(),
        serde_json::to_string(&par).unwrap()
    );
    assert!(matches!(run_batch(&runs, 0), Err(OrchestratorError::ZeroParallelism)));
    assert!(matches!(run_batch(&[], 2), Err(OrchestratorError::NoTopics)));
}

#[test]
fn trace_round_trips_through_both_formats() {
    let runs = batch(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let mut sink = JsonlTraceWriter::create(&path).unwrap();
    let trace = run_topic_with_sink(&runs[0], &mut sink);
    drop(sink);
    assert_eq!(RunTrace::from_json(&trace.to_json()).unwrap(), trace);
    assert_eq!(RunTrace::read(&path).unwrap(), trace);

    // Drop the closing line: the prefix still loads, marked failed.
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let partial = RunTrace::from_json(&lines[..lines.len() - 1].join("\n")).unwrap();
    assert_eq!(partial.termination, Termination::Failed);
    assert_eq!(partial.iterations, trace.iterations);
}

#[test]
fn corrupt_record_is_named() {
    let trace = run_topic(&batch(1)[0]);
    let mut value: serde_json::Value = serde_json::from_str(&trace.to_json()).unwrap();
    value["iterations"][2]["window"] = serde_json::json!({"start": 9, "end": 1});
    let err = RunTrace::from_json(&value.to_string()).unwrap_err();
    assert!(matches!(err, TraceError::BadRecord { index: 2, .. }), "{err}");
}

#[test]
fn trace_json_uses_stable_field_names() {
    let trace = run_topic(&batch(1)[0]);
    let v: serde_json::Value = serde_json::from_str(&trace.to_json()).unwrap();
    for key in ["topic", "iterations", "termination", "submission", "memory"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let r = &v["iterations"][0];
    for key in ["action", "reasoning", "matched", "unmatched", "window", "precision"] {
        assert!(r.get(key).is_some(), "{key}");
    }
}

#[test]
fn narration_covers_filters_and_empty_traces() {
    let (index, truth) = fan(3000, 1200);
    let run = TopicRun::new(
        "t",
        q0(),
        EngineConfig::default(),
        agents(&index, &truth, Arc::new(ThresholdOrchestrator::new(0.2).unwrap())),
    );
    let trace = run_topic(&run);
    let text = narrate(&trace, None);
    assert_eq!(text.matches("action: exploit").count(), 19);
    let one = narrate(&trace, Some(1));
    assert_eq!(one.matches("iteration ").count(), 1);
    let mut empty = trace.clone();
    empty.iterations.clear();
    assert!(narrate(&empty, None).contains("no iterations"));
}
