use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::EvalError;
use crate::domain::CandidateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgment {
    Relevant,
    Nonrelevant,
    Unjudged,
}

/// One qrels line: `topic stratum candidate grade`.
///
/// The second column is `0` in plain TREC qrels; sampled (xinfAP-style)
/// qrels use it for the stratum label. Grades above zero are relevant, zero
/// is nonrelevant and negative grades mark pooled-but-unjudged candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrelsRecord {
    pub topic: String,
    pub stratum: String,
    pub candidate: CandidateId,
    pub grade: i32,
}

impl QrelsRecord {
    pub fn judgment(&self) -> Judgment {
        match self.grade {
            g if g > 0 => Judgment::Relevant,
            0 => Judgment::Nonrelevant,
            _ => Judgment::Unjudged,
        }
    }
}

/// Relevance judgments keyed by topic, preserving file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    records: Vec<QrelsRecord>,
    index: IndexMap<String, IndexMap<CandidateId, usize>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: QrelsRecord) -> Result<(), EvalError> {
        let topic = self.index.entry(record.topic.clone()).or_default();
        if topic.contains_key(&record.candidate) {
            return Err(EvalError::DuplicateJudgment {
                topic: record.topic,
                candidate: record.candidate,
            });
        }
        topic.insert(record.candidate.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Shorthand for plain binary judgments in stratum `0`.
    pub fn judge(
        &mut self,
        topic: &str,
        candidate: CandidateId,
        relevant: bool,
    ) -> Result<(), EvalError> {
        self.insert(QrelsRecord {
            topic: topic.to_string(),
            stratum: "0".to_string(),
            candidate,
            grade: i32::from(relevant),
        })
    }

    pub fn record(&self, topic: &str, candidate: &CandidateId) -> Option<&QrelsRecord> {
        let idx = *self.index.get(topic)?.get(candidate)?;
        Some(&self.records[idx])
    }

    pub fn judgment(&self, topic: &str, candidate: &CandidateId) -> Judgment {
        self.record(topic, candidate)
            .map_or(Judgment::Unjudged, QrelsRecord::judgment)
    }

    pub fn is_relevant(&self, topic: &str, candidate: &CandidateId) -> bool {
        self.judgment(topic, candidate) == Judgment::Relevant
    }

    pub fn topic_records<'a>(&'a self, topic: &str) -> impl Iterator<Item = &'a QrelsRecord> + 'a {
        self.index
            .get(topic)
            .into_iter()
            .flat_map(|m| m.values())
            .map(|&i| &self.records[i])
    }

    pub fn relevant_count(&self, topic: &str) -> usize {
        self.topic_records(topic)
            .filter(|r| r.judgment() == Judgment::Relevant)
            .count()
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.index.contains_key(topic)
    }

    pub fn records(&self) -> &[QrelsRecord] {
        &self.records
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut qrels = Qrels::new();
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
            if cols.len() != 4 {
                return Err(bad(format!(
                    "expected `topic 0 candidate judgment`, got {} columns",
                    cols.len()
                )));
            }
            let grade = cols[3]
                .parse::<i32>()
                .map_err(|_| bad(format!("judgment `{}` is not an integer", cols[3])))?;
            let candidate = CandidateId::new(cols[2]).map_err(|e| bad(e.to_string()))?;
            qrels
                .insert(QrelsRecord {
                    topic: cols[0].to_string(),
                    stratum: cols[1].to_string(),
                    candidate,
                    grade,
                })
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(qrels)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{} {} {} {}", r.topic, r.stratum, r.candidate, r.grade);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path, self.to_trec_string())?;
        Ok(())
    }
}
