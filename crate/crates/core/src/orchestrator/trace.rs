use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{Usage, Verdict};
use crate::domain::{
    ActionKind, CandidateId, EngineConfig, EvalSummary, ExaminationWindow, MemoryBank,
    Query, SubmissionList,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The submission reached `L` matched entries.
    ReachedL,
    /// `T` iterations ran.
    ExhaustedT,
    /// Nothing was left to examine.
    CorpusExhausted,
    /// An agent failed after its retry; see the trace's `error`.
    Failed,
}

/// One evaluation of the loop and the decision that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Zero-based; equals the matching memory entry's iteration.
    pub iteration: usize,
    /// The query whose ranking was examined (embedding omitted).
    pub query: Query,
    pub window: ExaminationWindow,
    pub summary: EvalSummary,
    pub precision: f64,
    pub matched: Vec<CandidateId>,
    pub unmatched: Vec<CandidateId>,
    /// Absent only on the record that filled the submission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionKind>,
    /// The orchestrator's stated reason for `action`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    /// Set when explore was requested but reformulation repeated the query,
    /// so the loop exploited instead.
    #[serde(default)]
    pub downgraded: bool,
    /// The query produced by an explore step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reformulation: Option<Query>,
    /// Verdicts that carried an explanation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub usage: Usage,
}

impl IterationRecord {
    /// The action requested by the orchestrator, before any downgrade.
    pub fn requested_action(&self) -> Option<ActionKind> {
        if self.downgraded {
            Some(ActionKind::Explore)
        } else {
            self.action
        }
    }
}

/// The complete, self-describing result of one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub topic: String,
    pub original_query: Query,
    pub config: EngineConfig,
    pub iterations: Vec<IterationRecord>,
    pub submission: SubmissionList,
    pub memory: MemoryBank,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is not valid JSON: {0}")]
    Json(String),
    #[error("record {index}: {reason}")]
    BadRecord { index: usize, reason: String },
    #[error("trace header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces always serialize")
    }

    /// Parses either a full trace document or an incremental JSONL trace,
    /// naming the first record that fails.
    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let trimmed = text.trim_start();
        let value: Value = match serde_json::from_str(trimmed) {
            Ok(v) => v,
            Err(_) if trimmed.lines().count() > 1 => return Self::from_jsonl(trimmed),
            Err(e) => return Err(TraceError::Json(e.to_string())),
        };
        if let Some(records) = value.get("iterations").and_then(Value::as_array) {
            for (index, r) in records.iter().enumerate() {
                serde_json::from_value::<IterationRecord>(r.clone()).map_err(|e| {
                    TraceError::BadRecord {
                        index,
                        reason: e.to_string(),
                    }
                })?;
            }
        }
        let trace: RunTrace =
            serde_json::from_value(value).map_err(|e| TraceError::BadHeader(e.to_string()))?;
        trace.validate()?;
        Ok(trace)
    }

    /// Rebuilds a trace from [`JsonlTraceWriter`] output. A trace without its
    /// final line comes back as `Failed` with the records written so far.
    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: TraceHeader = lines
            .next()
            .ok_or_else(|| TraceError::BadHeader("empty trace".into()))
            .and_then(|l| {
                serde_json::from_str(l).map_err(|e| TraceError::BadHeader(e.to_string()))
            })?;
        let mut iterations = Vec::new();
        let mut footer = None;
        for line in lines {
            let value: Value = serde_json::from_str(line).map_err(|e| TraceError::BadRecord {
                index: iterations.len(),
                reason: e.to_string(),
            })?;
            if value.get("termination").is_some() {
                footer = Some(
                    serde_json::from_value::<TraceFooter>(value).map_err(|e| TraceError::BadRecord {
                        index: iterations.len(),
                        reason: e.to_string(),
                    })?,
                );
                break;
            }
            iterations.push(serde_json::from_value(value).map_err(|e| TraceError::BadRecord {
                index: iterations.len(),
                reason: e.to_string(),
            })?);
        }
        let footer = footer.unwrap_or_else(|| TraceFooter {
            termination: Termination::Failed,
            error: Some("trace ended before the run finished".into()),
            submission: SubmissionList::new(header.config.submission_length())
                .expect("config L is at least 1"),
            memory: MemoryBank::new(),
        });
        let trace = RunTrace {
            topic: header.topic,
            original_query: header.original_query,
            config: header.config,
            iterations,
            submission: footer.submission,
            memory: footer.memory,
            termination: footer.termination,
            error: footer.error,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Structural checks a loaded trace must pass.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen: HashSet<&CandidateId> = HashSet::new();
        for (index, r) in self.iterations.iter().enumerate() {
            let bad = |reason: String| TraceError::BadRecord { index, reason };
            if r.iteration != index {
                return Err(bad(format!("iteration {} out of sequence", r.iteration)));
            }
            if r.summary.matched() != r.matched.len() || r.summary.unmatched() != r.unmatched.len() {
                return Err(bad("summary counts disagree with matched/unmatched lists".into()));
            }
            for id in r.matched.iter().chain(&r.unmatched) {
                if !seen.insert(id) {
                    return Err(bad(format!("candidate {id} examined twice")));
                }
            }
        }
        if self.iterations.len() > self.config.max_iterations() {
            return Err(TraceError::BadHeader(format!(
                "{} iterations exceed T={}",
                self.iterations.len(),
                self.config.max_iterations()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceHeader {
    topic: String,
    original_query: Query,
    config: EngineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceFooter {
    termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    submission: SubmissionList,
    memory: MemoryBank,
}

/// Receives a topic's trace as it is produced.
pub trait TraceSink: Send {
    fn begin(&mut self, topic: &str, original: &Query, config: &EngineConfig);
    fn record(&mut self, record: &IterationRecord);
    fn finish(&mut self, trace: &RunTrace);
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn begin(&mut self, _: &str, _: &Query, _: &EngineConfig) {}
    fn record(&mut self, _: &IterationRecord) {}
    fn finish(&mut self, _: &RunTrace) {}
}

/// Writes a header line, one line per record, and a closing line, flushing
/// after each so an interrupted run leaves a readable prefix.
pub struct JsonlTraceWriter {
    out: BufWriter<File>,
}

impl JsonlTraceWriter {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    fn line<T: Serialize>(&mut self, value: &T) {
        let result = serde_json::to_writer(&mut self.out, value)
            .map_err(std::io::Error::other)
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush());
        if let Err(err) = result {
            tracing::warn!(%err, "trace write failed");
        }
    }
}

impl TraceSink for JsonlTraceWriter {
    fn begin(&mut self, topic: &str, original: &Query, config: &EngineConfig) {
        self.line(&TraceHeader {
            topic: topic.to_string(),
            original_query: original.without_embedding(),
            config: *config,
        });
    }

    fn record(&mut self, record: &IterationRecord) {
        self.line(record);
    }

    fn finish(&mut self, trace: &RunTrace) {
        self.line(&TraceFooter {
            termination: trace.termination,
            error: trace.error.clone(),
            submission: trace.submission.clone(),
            memory: trace.memory.clone(),
        });
    }
}

/// Human-readable account of a trace, one block per iteration.
pub fn narrate(trace: &RunTrace, only: Option<usize>) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "topic {}: \"{}\" (T={} k={} L={})",
        trace.topic,
        trace.original_query.text(),
        trace.config.max_iterations(),
        trace.config.examination_length(),
        trace.config.submission_length()
    );
    let records: Vec<&IterationRecord> = trace
        .iterations
        .iter()
        .filter(|r| only.is_none_or(|i| r.iteration == i))
        .collect();
    if records.is_empty() {
        let _ = writeln!(out, "no iterations");
    }
    for r in records {
        let _ = writeln!(
            out,
            "iteration {}: query \"{}\" window {} precision {:.3} ({})",
            r.iteration,
            r.query.text(),
            r.window,
            r.precision,
            r.summary
        );
        match (r.action, &r.reasoning) {
            (Some(a), Some(why)) if r.downgraded => {
                let _ = writeln!(out, "  action: explore requested, {a} taken (reformulation repeated the query): {why}");
            }
            (Some(a), Some(why)) => {
                let _ = writeln!(out, "  action: {a}: {why}");
            }
            (Some(a), None) => {
                let _ = writeln!(out, "  action: {a}");
            }
            (None, _) => {
                let _ = writeln!(out, "  submission full, loop stopped");
            }
        }
        if let Some(q) = &r.reformulation {
            let _ = writeln!(
                out,
                "  reformulated: \"{}\" because {}",
                q.text(),
                q.reasoning().unwrap_or("(none)")
            );
        }
    }
    let _ = writeln!(
        out,
        "termination: {} with {} submitted ({} matched)",
        serde_json::to_value(trace.termination)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        trace.submission.len(),
        trace.submission.matched_len()
    );
    if let Some(e) = &trace.error {
        let _ = writeln!(out, "error: {e}");
    }
    out
}
