use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::EvalError;
use crate::domain::{CandidateId, SubmissionList};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub candidate: CandidateId,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// A TREC run: per topic, candidates with consecutive ranks from 1 and
/// non-increasing scores. Topic order follows insertion (file) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    topics: IndexMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a ranked topic. Scores are `n, n-1, ..., 1` so any TREC tool
    /// recovers the submission order.
    pub fn add_submission(
        &mut self,
        topic: &str,
        submission: &SubmissionList,
        tag: &str,
    ) -> Result<(), EvalError> {
        let n = submission.len();
        let entries = submission
            .ids()
            .enumerate()
            .map(|(i, id)| RunEntry {
                candidate: id.clone(),
                rank: i + 1,
                score: (n - i) as f64,
                tag: tag.to_string(),
            })
            .collect();
        self.add_topic(topic, entries)
    }

    /// Adds (or replaces) a topic after validating rank and score order.
    pub fn add_topic(&mut self, topic: &str, entries: Vec<RunEntry>) -> Result<(), EvalError> {
        validate_topic(topic, &entries).map_err(|(i, reason)| EvalError::Parse {
            line: i + 1,
            reason: format!("topic {topic}: {reason}"),
        })?;
        self.topics.insert(topic.to_string(), entries);
        Ok(())
    }

    pub fn topic(&self, topic: &str) -> Option<&[RunEntry]> {
        self.topics.get(topic).map(Vec::as_slice)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn ranking(&self, topic: &str) -> Vec<CandidateId> {
        self.topic(topic)
            .map(|es| es.iter().map(|e| e.candidate.clone()).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Fails if any topic is longer than `limit` entries.
    pub fn check_length(&self, limit: usize) -> Result<(), EvalError> {
        for (topic, entries) in &self.topics {
            if entries.len() > limit {
                return Err(EvalError::TooLong {
                    topic: topic.clone(),
                    len: entries.len(),
                    limit,
                });
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut topics: IndexMap<String, Vec<RunEntry>> = IndexMap::new();
        let mut seen: IndexMap<String, HashSet<CandidateId>> = IndexMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| EvalError::Parse {
                line: lineno,
                reason,
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(bad(format!(
                    "expected `topic Q0 candidate rank score tag`, got {} columns",
                    cols.len()
                )));
            }
            let candidate = CandidateId::new(cols[2]).map_err(|e| bad(e.to_string()))?;
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| bad(format!("rank `{}` is not a positive integer", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| bad(format!("score `{}` is not a finite number", cols[4])))?;
            let entries = topics.entry(cols[0].to_string()).or_default();
            let expected = entries.len() + 1;
            if rank != expected {
                return Err(bad(format!("rank {rank} where {expected} was expected")));
            }
            if let Some(prev) = entries.last() {
                if score > prev.score {
                    return Err(bad(format!(
                        "score {score} increases over previous {}",
                        prev.score
                    )));
                }
            }
            if !seen.entry(cols[0].to_string()).or_default().insert(candidate.clone()) {
                return Err(bad(format!("candidate {candidate} repeated")));
            }
            entries.push(RunEntry {
                candidate,
                rank,
                score,
                tag: cols[5].to_string(),
            });
        }
        Ok(Self { topics })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (topic, entries) in &self.topics {
            for e in entries {
                let _ = writeln!(
                    out,
                    "{} Q0 {} {} {} {}",
                    topic, e.candidate, e.rank, e.score, e.tag
                );
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path, self.to_trec_string())?;
        Ok(())
    }
}

fn validate_topic(topic: &str, entries: &[RunEntry]) -> Result<(), (usize, String)> {
    if topic.is_empty() || topic.contains(char::is_whitespace) {
        return Err((0, "topic id must be a non-empty token".into()));
    }
    let mut seen = HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        if e.rank != i + 1 {
            return Err((i, format!("rank {} where {} was expected", e.rank, i + 1)));
        }
        if !e.score.is_finite() {
            return Err((i, "score is not finite".into()));
        }
        if i > 0 && e.score > entries[i - 1].score {
            return Err((i, "scores must be non-increasing".into()));
        }
        if e.tag.is_empty() || e.tag.contains(char::is_whitespace) {
            return Err((i, "run tag must be a non-empty token".into()));
        }
        if e.candidate.as_str().contains(char::is_whitespace) {
            return Err((i, "candidate id contains whitespace".into()));
        }
        if !seen.insert(&e.candidate) {
            return Err((i, format!("candidate {} repeated", e.candidate)));
        }
    }
    Ok(())
}
