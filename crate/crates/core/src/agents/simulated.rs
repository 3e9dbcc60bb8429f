//! Agents that need no model backend: ground-truth and noisy judges, rule
//! based orchestrators, and a reformulator that moves the query vector.

use std::sync::Arc;

use super::{
    normalize, AgentContext, AgentError, CorpusIndex, OrchestrationAgent, ReasoningAgent,
    ReformulationAgent, ReformulationRequest, Verdict,
};
use crate::domain::{precision_of, Action, ActionKind, CandidateId, EvalSummary, Query, RankedEntry};
use crate::eval::Qrels;
use crate::seeds;

fn check_rate(name: &str, v: f64) -> Result<f64, AgentError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(AgentError::Backend(format!("{name} must lie in [0,1], got {v}")))
    }
}

/// Judges by ground truth.
#[derive(Debug, Clone)]
pub struct OracleReasoner {
    truth: Arc<Qrels>,
}

impl OracleReasoner {
    pub fn new(truth: Arc<Qrels>) -> Self {
        Self { truth }
    }
}

impl ReasoningAgent for OracleReasoner {
    fn judge_candidate(
        &self,
        ctx: &AgentContext<'_>,
        _query: &Query,
        candidate: &RankedEntry,
    ) -> Result<Verdict, AgentError> {
        Ok(Verdict {
            candidate: candidate.id.clone(),
            matched: self.truth.is_relevant(ctx.topic, &candidate.id),
            reasoning: None,
        })
    }
}

/// Ground truth seen through independent per-candidate errors.
///
/// A relevant candidate is matched with probability `tpr`, a nonrelevant one
/// with probability `fpr`. The draw for a (topic, candidate) pair is fixed by
/// the seed, so repeated judgments agree.
#[derive(Debug, Clone)]
pub struct NoisyReasoner {
    truth: Arc<Qrels>,
    tpr: f64,
    fpr: f64,
    seed: u64,
}

impl NoisyReasoner {
    pub fn new(truth: Arc<Qrels>, tpr: f64, fpr: f64, seed: u64) -> Result<Self, AgentError> {
        Ok(Self {
            truth,
            tpr: check_rate("tpr", tpr)?,
            fpr: check_rate("fpr", fpr)?,
            seed,
        })
    }

    fn draw(&self, topic: &str, id: &CandidateId) -> f64 {
        seeds::unit(seeds::derive(seeds::derive(self.seed, topic), id.as_str()))
    }
}

impl ReasoningAgent for NoisyReasoner {
    fn judge_candidate(
        &self,
        ctx: &AgentContext<'_>,
        _query: &Query,
        candidate: &RankedEntry,
    ) -> Result<Verdict, AgentError> {
        let rate = if self.truth.is_relevant(ctx.topic, &candidate.id) {
            self.tpr
        } else {
            self.fpr
        };
        Ok(Verdict {
            candidate: candidate.id.clone(),
            matched: self.draw(ctx.topic, &candidate.id) < rate,
            reasoning: None,
        })
    }
}

/// Exploits while the last precision is at least `tau`, explores otherwise.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdOrchestrator {
    tau: f64,
}

impl ThresholdOrchestrator {
    pub fn new(tau: f64) -> Result<Self, AgentError> {
        Ok(Self {
            tau: check_rate("tau", tau)?,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl OrchestrationAgent for ThresholdOrchestrator {
    fn decide(
        &self,
        _ctx: &AgentContext<'_>,
        _query: &Query,
        summary: &EvalSummary,
    ) -> Result<Action, AgentError> {
        let p = precision_of(summary);
        Ok(if p >= self.tau {
            Action::new(
                ActionKind::Exploit,
                format!("precision {p:.3} >= threshold {:.3}", self.tau),
            )
        } else {
            Action::new(
                ActionKind::Explore,
                format!("precision {p:.3} < threshold {:.3}", self.tau),
            )
        })
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub ActionKind);

impl OrchestrationAgent for FixedPolicy {
    fn decide(
        &self,
        _ctx: &AgentContext<'_>,
        _query: &Query,
        summary: &EvalSummary,
    ) -> Result<Action, AgentError> {
        Ok(Action::new(
            self.0,
            format!("fixed {} policy ({summary})", self.0),
        ))
    }
}

/// Moves the query vector a fraction `alpha` of the way toward the unit
/// centroid of everything matched so far, then renormalizes.
///
/// Before anything has matched it instead steps away from the centroid of
/// the last examined slice, which was judged entirely unmatched.
#[derive(Debug, Clone)]
pub struct CentroidNudge {
    index: Arc<CorpusIndex>,
    alpha: f64,
}

impl CentroidNudge {
    pub fn new(index: Arc<CorpusIndex>, alpha: f64) -> Result<Self, AgentError> {
        Ok(Self {
            index,
            alpha: check_rate("alpha", alpha)?,
        })
    }

    fn centroid<'a>(&self, ids: impl Iterator<Item = &'a CandidateId>) -> Result<Option<Vec<f32>>, AgentError> {
        let mut sum = vec![0.0f64; self.index.dimension()];
        let mut n = 0usize;
        for id in ids {
            let v = self
                .index
                .vector(id)
                .ok_or_else(|| AgentError::UnknownCandidate(id.clone()))?;
            sum.iter_mut().zip(v).for_each(|(s, &x)| *s += x as f64);
            n += 1;
        }
        if n == 0 {
            return Ok(None);
        }
        let mean: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
        Ok(normalize(&mean))
    }

    /// `normalize(q + alpha * (target - q))`, or `None` when degenerate.
    pub fn step(q: &[f32], target: &[f32], alpha: f64) -> Option<Vec<f32>> {
        let moved: Vec<f32> = q
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a as f64 + alpha * (b as f64 - a as f64)) as f32)
            .collect();
        normalize(&moved)
    }
}

impl ReformulationAgent for CentroidNudge {
    fn reformulate(
        &self,
        _ctx: &AgentContext<'_>,
        request: &ReformulationRequest<'_>,
    ) -> Result<Query, AgentError> {
        let previous = request
            .previous
            .embedding()
            .ok_or_else(|| AgentError::MissingEmbedding(request.previous.text().to_string()))?;
        let q = normalize(previous)
            .ok_or_else(|| AgentError::Backend("previous query vector is degenerate".into()))?;

        let (next, how) = if let Some(c) = self.centroid(request.matched_so_far.iter())? {
            (
                Self::step(&q, &c, self.alpha),
                format!(
                    "moved {:.0}% toward the centroid of {} matched candidates",
                    self.alpha * 100.0,
                    request.matched_so_far.len()
                ),
            )
        } else if let Some(c) = self.centroid(request.last_examined.iter().map(|e| &e.id))? {
            // Reflect the unmatched centroid through q: target = 2q - c.
            let away: Vec<f32> = q.iter().zip(&c).map(|(&a, &b)| 2.0 * a - b).collect();
            (
                Self::step(&q, &away, self.alpha),
                format!(
                    "moved {:.0}% away from the centroid of {} unmatched candidates",
                    self.alpha * 100.0,
                    request.last_examined.len()
                ),
            )
        } else {
            return Err(AgentError::DuplicateReformulation);
        };

        let next = next.ok_or(AgentError::DuplicateReformulation)?;
        if next.as_slice() == q.as_slice() || next.as_slice() == previous {
            return Err(AgentError::DuplicateReformulation);
        }
        let text = format!("{} [refined {}]", request.original.text(), request.memory.len());
        if text == request.previous.text() {
            return Err(AgentError::DuplicateReformulation);
        }
        Ok(Query::reformulated(text, how)?.with_embedding(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{dot, judge, UsageMeter};
    use crate::domain::MemoryBank;

    fn id(s: &str) -> CandidateId {
        CandidateId::new(s).unwrap()
    }

    fn entry(s: &str) -> RankedEntry {
        RankedEntry::new(id(s), 0.0)
    }

    #[test]
    fn oracle_matches_ground_truth_slice() {
        let mut q = Qrels::new();
        q.judge("t", id("a"), true).unwrap();
        q.judge("t", id("b"), false).unwrap();
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let query = Query::original("q").unwrap();
        let j = judge(&OracleReasoner::new(Arc::new(q)), &ctx, &query, &[entry("a"), entry("b")], 1);
        assert_eq!(j.matched, vec![id("a")]);
        assert_eq!(j.unmatched, vec![id("b")]);
    }

    #[test]
    fn degenerate_noise_is_the_oracle() {
        let mut q = Qrels::new();
        for i in 0..200 {
            q.judge("t", id(&format!("d{i}")), i % 3 == 0).unwrap();
        }
        let q = Arc::new(q);
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let query = Query::original("q").unwrap();
        let slice: Vec<_> = (0..200).map(|i| entry(&format!("d{i}"))).collect();
        let noisy = NoisyReasoner::new(q.clone(), 1.0, 0.0, 99).unwrap();
        assert_eq!(
            judge(&noisy, &ctx, &query, &slice, 1),
            judge(&OracleReasoner::new(q), &ctx, &query, &slice, 1)
        );
    }

    #[test]
    fn noise_rates_match_configuration() {
        let n = 10_000;
        let mut q = Qrels::new();
        for i in 0..n {
            q.judge("t", id(&format!("d{i}")), i % 2 == 0).unwrap();
        }
        let noisy = NoisyReasoner::new(Arc::new(q), 0.9, 0.1, 2024).unwrap();
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let query = Query::original("q").unwrap();
        let (mut tp, mut fp) = (0, 0);
        for i in 0..n {
            let v = noisy.judge_candidate(&ctx, &query, &entry(&format!("d{i}"))).unwrap();
            match (i % 2 == 0, v.matched) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                _ => {}
            }
        }
        let half = (n / 2) as f64;
        assert!((tp as f64 / half - 0.9).abs() <= 0.02);
        assert!((fp as f64 / half - 0.1).abs() <= 0.02);
    }

    #[test]
    fn threshold_rule_on_case_study_precisions() {
        let o = ThresholdOrchestrator::new(0.2).unwrap();
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let q = Query::original("q").unwrap();
        let hi = o.decide(&ctx, &q, &EvalSummary::new(32, 18).unwrap()).unwrap();
        let lo = o.decide(&ctx, &q, &EvalSummary::new(3, 47).unwrap()).unwrap();
        assert_eq!(hi.kind, ActionKind::Exploit);
        assert_eq!(lo.kind, ActionKind::Explore);
        assert!(!hi.reasoning.is_empty() && !lo.reasoning.is_empty());
        let greedy = ThresholdOrchestrator::new(0.0).unwrap();
        let zero = greedy.decide(&ctx, &q, &EvalSummary::new(0, 50).unwrap()).unwrap();
        assert_eq!(zero.kind, ActionKind::Exploit);
        assert!(ThresholdOrchestrator::new(1.5).is_err());
    }

    fn plane_index() -> Arc<CorpusIndex> {
        // m1, m2 relevant near +y; u1 unmatched near +x.
        let ids = vec![id("m1"), id("m2"), id("u1")];
        let vectors = vec![0.2, 1.0, -0.2, 1.0, 1.0, 0.1];
        Arc::new(CorpusIndex::normalized(ids, 2, vectors).unwrap())
    }

    fn nudge_request<'a>(
        original: &'a Query,
        previous: &'a Query,
        memory: &'a MemoryBank,
        matched: &'a [CandidateId],
        last: &'a [RankedEntry],
    ) -> ReformulationRequest<'a> {
        ReformulationRequest {
            original,
            previous,
            memory,
            decision_reasoning: "low precision",
            matched_so_far: matched,
            last_examined: last,
        }
    }

    #[test]
    fn nudge_matches_closed_form() {
        let index = plane_index();
        let nudge = CentroidNudge::new(index.clone(), 0.5).unwrap();
        let q0 = Query::original("q").unwrap().with_embedding(vec![1.0, 0.0]);
        let memory = MemoryBank::new();
        let matched = [id("m1"), id("m2")];
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let out = nudge
            .reformulate(&ctx, &nudge_request(&q0, &q0, &memory, &matched, &[]))
            .unwrap();
        // Centroid of m1, m2 is +y exactly; q + 0.5 (c - q) = (0.5, 0.5).
        let want = [std::f32::consts::FRAC_1_SQRT_2; 2];
        let got = out.embedding().unwrap();
        assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
        assert!(out.reasoning().is_some_and(|r| !r.is_empty()));
        assert_ne!(out.text(), q0.text());
    }

    #[test]
    fn nudge_toward_relevant_raises_intent_cosine() {
        let index = plane_index();
        let intent = [0.0f32, 1.0];
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let memory = MemoryBank::new();
        let matched = [id("m1")];
        for alpha in [0.1, 0.5, 1.0] {
            let nudge = CentroidNudge::new(index.clone(), alpha).unwrap();
            let q0 = Query::original("q").unwrap().with_embedding(vec![1.0, 0.0]);
            let out = nudge
                .reformulate(&ctx, &nudge_request(&q0, &q0, &memory, &matched, &[]))
                .unwrap();
            assert!(dot(out.embedding().unwrap(), &intent) > dot(&[1.0, 0.0], &intent));
        }
    }

    #[test]
    fn zero_step_is_a_duplicate() {
        let nudge = CentroidNudge::new(plane_index(), 0.0).unwrap();
        let q0 = Query::original("q").unwrap().with_embedding(vec![1.0, 0.0]);
        let memory = MemoryBank::new();
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let err = nudge
            .reformulate(&ctx, &nudge_request(&q0, &q0, &memory, &[id("m1")], &[]))
            .unwrap_err();
        assert_eq!(err, AgentError::DuplicateReformulation);
    }

    #[test]
    fn without_matches_the_query_moves_off_the_unmatched_slice() {
        let index = plane_index();
        let nudge = CentroidNudge::new(index.clone(), 0.5).unwrap();
        let start = normalize(&[1.0, 0.3]).unwrap();
        let q0 = Query::original("q").unwrap().with_embedding(start.clone());
        let memory = MemoryBank::new();
        let usage = UsageMeter::default();
        let ctx = AgentContext::new("t", &usage);
        let out = nudge
            .reformulate(&ctx, &nudge_request(&q0, &q0, &memory, &[], &[entry("u1")]))
            .unwrap();
        let u1 = index.row(2);
        assert!(dot(out.embedding().unwrap(), u1) < dot(&start, u1));
    }
}
