//! Value types shared by every stage of the retrieval loop.
//!
//! Everything here is plain data plus pure state transitions. Mutating
//! operations validate first and only then touch `self`, so a returned error
//! always leaves the value unchanged.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("candidate id must be non-empty")]
    EmptyCandidateId,
    #[error("query text must be non-empty")]
    EmptyQuery,
    #[error("original queries carry no reformulation reasoning")]
    ReasoningOnOriginal,
    #[error("invalid evaluation summary: {0}")]
    InvalidSummary(String),
    #[error("invalid examination window [{start}, {end})")]
    InvalidWindow { start: usize, end: usize },
    #[error("score for {0} is not finite")]
    NonFiniteScore(CandidateId),
    #[error("duplicate candidate {0}")]
    DuplicateCandidate(CandidateId),
    #[error("memory iteration {got} does not follow {last}")]
    NonMonotoneIteration { last: usize, got: usize },
    #[error("precision {stored} does not match summary ({expected})")]
    PrecisionMismatch { stored: f64, expected: f64 },
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("malformed memory line {line}: {reason}")]
    MalformedMemoryLine { line: usize, reason: String },
}

/// Opaque identifier of one video shot, e.g. `shot10401_104`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CandidateId(String);

impl CandidateId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptyCandidateId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CandidateId {
    type Error = DomainError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CandidateId> for String {
    fn from(id: CandidateId) -> Self {
        id.0
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    Original,
    Reformulated,
}

/// A search query plus, optionally, its embedding in the corpus space.
///
/// Simulated reformulation works directly on the embedding; LLM
/// reformulation produces text only and leaves `embedding` empty until an
/// encoder fills it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct Query {
    text: String,
    origin: QueryOrigin,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasoning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
}

#[derive(Deserialize)]
struct RawQuery {
    text: String,
    origin: QueryOrigin,
    #[serde(default)]
    reasoning: Option<String>,
    #[serde(default)]
    embedding: Option<Vec<f32>>,
}

impl TryFrom<RawQuery> for Query {
    type Error = DomainError;

    fn try_from(raw: RawQuery) -> Result<Self, Self::Error> {
        let query = match raw.origin {
            QueryOrigin::Original => {
                if raw.reasoning.is_some() {
                    return Err(DomainError::ReasoningOnOriginal);
                }
                Query::original(raw.text)?
            }
            QueryOrigin::Reformulated => {
                Query::reformulated(raw.text, raw.reasoning.unwrap_or_default())?
            }
        };
        Ok(match raw.embedding {
            Some(v) => query.with_embedding(v),
            None => query,
        })
    }
}

impl Query {
    pub fn original(text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyQuery);
        }
        Ok(Self {
            text,
            origin: QueryOrigin::Original,
            reasoning: None,
            embedding: None,
        })
    }

    pub fn reformulated(
        text: impl Into<String>,
        reasoning: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyQuery);
        }
        Ok(Self {
            text,
            origin: QueryOrigin::Reformulated,
            reasoning: Some(reasoning.into()),
            embedding: None,
        })
    }

    pub fn with_embedding(mut self, embedding: Vec<f32>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    /// Copy without the embedding, as stored in memory and traces.
    pub fn without_embedding(&self) -> Self {
        Self {
            embedding: None,
            ..self.clone()
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn origin(&self) -> QueryOrigin {
        self.origin
    }

    pub fn reasoning(&self) -> Option<&str> {
        self.reasoning.as_deref()
    }

    pub fn embedding(&self) -> Option<&[f32]> {
        self.embedding.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: CandidateId,
    pub score: f64,
}

impl RankedEntry {
    pub fn new(id: CandidateId, score: f64) -> Self {
        Self { id, score }
    }
}

/// Ranking order: descending score, ties broken by ascending id.
pub fn ranking_cmp(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Candidates in ranking order with unique ids and finite scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts `entries` into ranking order, rejecting NaN scores and duplicates.
    pub fn from_scored(mut entries: Vec<RankedEntry>) -> Result<Self, DomainError> {
        if let Some(bad) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(DomainError::NonFiniteScore(bad.id.clone()));
        }
        entries.sort_by(ranking_cmp);
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(DomainError::DuplicateCandidate(e.id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    /// The first `k` entries (fewer if the list is shorter).
    pub fn head(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &CandidateId> {
        self.entries.iter().map(|e| &e.id)
    }
}

impl<'de> Deserialize<'de> for RankedList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entries: Vec<RankedEntry>,
        }
        let raw = Raw::deserialize(d)?;
        RankedList::from_scored(raw.entries).map_err(serde::de::Error::custom)
    }
}

/// Outcome counts of one reasoning pass over an examined slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSummary")]
pub struct EvalSummary {
    examined: usize,
    matched: usize,
    unmatched: usize,
}

#[derive(Deserialize)]
struct RawSummary {
    examined: usize,
    matched: usize,
    unmatched: usize,
}

impl TryFrom<RawSummary> for EvalSummary {
    type Error = DomainError;

    fn try_from(raw: RawSummary) -> Result<Self, Self::Error> {
        EvalSummary::from_counts(raw.examined, raw.matched, raw.unmatched)
    }
}

impl EvalSummary {
    pub fn new(matched: usize, unmatched: usize) -> Result<Self, DomainError> {
        Self::from_counts(matched + unmatched, matched, unmatched)
    }

    pub fn from_counts(
        examined: usize,
        matched: usize,
        unmatched: usize,
    ) -> Result<Self, DomainError> {
        if examined == 0 {
            return Err(DomainError::InvalidSummary("nothing examined".into()));
        }
        if matched + unmatched != examined {
            return Err(DomainError::InvalidSummary(format!(
                "matched {matched} + unmatched {unmatched} != examined {examined}"
            )));
        }
        Ok(Self {
            examined,
            matched,
            unmatched,
        })
    }

    pub fn examined(&self) -> usize {
        self.examined
    }

    pub fn matched(&self) -> usize {
        self.matched
    }

    pub fn unmatched(&self) -> usize {
        self.unmatched
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "k={} matched={} unmatched={}",
            self.examined, self.matched, self.unmatched
        )
    }
}

/// Fraction of examined candidates judged matched.
///
/// Divides by the number actually examined rather than the nominal window
/// length, so a short final slice is not penalised.
pub fn precision_of(summary: &EvalSummary) -> f64 {
    summary.matched as f64 / summary.examined as f64
}

/// Half-open span `[start, end)` of a query's ranking examined so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct ExaminationWindow {
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct RawWindow {
    start: usize,
    end: usize,
}

impl TryFrom<RawWindow> for ExaminationWindow {
    type Error = DomainError;

    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        ExaminationWindow::new(raw.start, raw.end)
    }
}

impl ExaminationWindow {
    pub fn new(start: usize, end: usize) -> Result<Self, DomainError> {
        if start >= end {
            return Err(DomainError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    /// `[0, k)`, the window of a fresh query.
    pub fn reset(k: usize) -> Result<Self, DomainError> {
        Self::new(0, k)
    }

    /// Shifts both bounds by `k`.
    pub fn advance(self, k: usize) -> Self {
        Self {
            start: self.start + k,
            end: self.end + k,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }
}

impl fmt::Display for ExaminationWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMemoryEntry")]
pub struct MemoryEntry {
    iteration: usize,
    query: Query,
    precision: f64,
    summary: EvalSummary,
    window: ExaminationWindow,
}

#[derive(Deserialize)]
struct RawMemoryEntry {
    iteration: usize,
    query: Query,
    precision: f64,
    summary: EvalSummary,
    window: ExaminationWindow,
}

impl TryFrom<RawMemoryEntry> for MemoryEntry {
    type Error = DomainError;

    fn try_from(raw: RawMemoryEntry) -> Result<Self, Self::Error> {
        let entry = MemoryEntry::new(raw.iteration, raw.query, raw.summary, raw.window);
        if (entry.precision - raw.precision).abs() > 1e-12 {
            return Err(DomainError::PrecisionMismatch {
                stored: raw.precision,
                expected: entry.precision,
            });
        }
        Ok(entry)
    }
}

impl MemoryEntry {
    /// Precision is derived from `summary`; the query is stored without its embedding.
    pub fn new(
        iteration: usize,
        query: Query,
        summary: EvalSummary,
        window: ExaminationWindow,
    ) -> Self {
        Self {
            iteration,
            query: query.without_embedding(),
            precision: precision_of(&summary),
            summary,
            window,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn summary(&self) -> &EvalSummary {
        &self.summary
    }

    pub fn window(&self) -> ExaminationWindow {
        self.window
    }
}

/// Append-only retrieval-performance history, strictly increasing in iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MemoryEntry>", into = "Vec<MemoryEntry>")]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
}

impl TryFrom<Vec<MemoryEntry>> for MemoryBank {
    type Error = DomainError;

    fn try_from(entries: Vec<MemoryEntry>) -> Result<Self, Self::Error> {
        let mut bank = MemoryBank::new();
        for e in entries {
            bank.update(e)?;
        }
        Ok(bank)
    }
}

impl From<MemoryBank> for Vec<MemoryEntry> {
    fn from(bank: MemoryBank) -> Self {
        bank.entries
    }
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, entry: MemoryEntry) -> Result<(), DomainError> {
        if let Some(last) = self.entries.last() {
            if entry.iteration <= last.iteration {
                return Err(DomainError::NonMonotoneIteration {
                    last: last.iteration,
                    got: entry.iteration,
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lossless tab-separated form, one entry per line:
    /// `iteration origin precision examined matched unmatched start end text reasoning`.
    /// Text fields escape backslash, tab and newline; a missing reasoning is `-`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let origin = match e.query.origin {
                QueryOrigin::Original => "original",
                QueryOrigin::Reformulated => "reformulated",
            };
            let reasoning = match &e.query.reasoning {
                Some(r) => format!("+{}", escape_field(r)),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.iteration,
                origin,
                e.precision,
                e.summary.examined,
                e.summary.matched,
                e.summary.unmatched,
                e.window.start,
                e.window.end,
                escape_field(&e.query.text),
                reasoning,
            ));
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, DomainError> {
        let mut bank = MemoryBank::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| DomainError::MalformedMemoryLine {
                line: lineno,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 10 {
                return Err(bad("expected 10 tab-separated fields"));
            }
            let num = |i: usize| -> Result<usize, DomainError> {
                fields[i].parse().map_err(|_| bad("bad integer field"))
            };
            let text = unescape_field(fields[8]).ok_or_else(|| bad("bad escape"))?;
            let query = match (fields[1], fields[9]) {
                ("original", "-") => Query::original(text)?,
                ("reformulated", r) if r.starts_with('+') => {
                    let r = unescape_field(&r[1..]).ok_or_else(|| bad("bad escape"))?;
                    Query::reformulated(text, r)?
                }
                _ => return Err(bad("bad origin/reasoning pair")),
            };
            let precision: f64 = fields[2].parse().map_err(|_| bad("bad precision"))?;
            let summary = EvalSummary::from_counts(num(3)?, num(4)?, num(5)?)?;
            let window = ExaminationWindow::new(num(6)?, num(7)?)?;
            let entry = MemoryEntry::new(num(0)?, query, summary, window);
            if (entry.precision - precision).abs() > 1e-12 {
                return Err(bad("precision does not match counts"));
            }
            bank.update(entry)?;
        }
        Ok(bank)
    }
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            't' => out.push('\t'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Exploit,
    Explore,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Exploit => "exploit",
            ActionKind::Explore => "explore",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub reasoning: String,
}

impl Action {
    pub fn new(kind: ActionKind, reasoning: impl Into<String>) -> Self {
        Self {
            kind,
            reasoning: reasoning.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Judged matched by the reasoning agent.
    Matched,
    /// Filled in at finalization from the last ranking.
    Padding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionEntry {
    pub id: CandidateId,
    pub provenance: Provenance,
}

/// The accumulated answer list: unique ids, at most `capacity` long, matched
/// entries strictly before padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSubmission")]
pub struct SubmissionList {
    capacity: usize,
    entries: Vec<SubmissionEntry>,
    #[serde(skip)]
    seen: HashSet<CandidateId>,
}

#[derive(Deserialize)]
struct RawSubmission {
    capacity: usize,
    entries: Vec<SubmissionEntry>,
}

impl TryFrom<RawSubmission> for SubmissionList {
    type Error = DomainError;

    fn try_from(raw: RawSubmission) -> Result<Self, Self::Error> {
        let mut list = SubmissionList::new(raw.capacity)?;
        let split = raw
            .entries
            .iter()
            .position(|e| e.provenance == Provenance::Padding)
            .unwrap_or(raw.entries.len());
        let (matched, padding) = raw.entries.split_at(split);
        if padding.iter().any(|e| e.provenance == Provenance::Matched) {
            return Err(DomainError::Invariant(
                "matched entry after padding".into(),
            ));
        }
        let ids = |es: &[SubmissionEntry]| es.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        if list.append_matched(&ids(matched))? != matched.len()
            || list.append_padding(&ids(padding))? != padding.len()
        {
            return Err(DomainError::Invariant("submission exceeds capacity".into()));
        }
        Ok(list)
    }
}

impl SubmissionList {
    pub fn new(capacity: usize) -> Result<Self, DomainError> {
        if capacity == 0 {
            return Err(DomainError::InvalidConfig(
                "submission capacity must be >= 1".into(),
            ));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            seen: HashSet::new(),
        })
    }

    /// Appends matched ids in order, up to the remaining capacity. Returns how
    /// many were appended. Any id already present (or repeated in `ids`)
    /// rejects the whole call.
    pub fn append_matched(&mut self, ids: &[CandidateId]) -> Result<usize, DomainError> {
        if self
            .entries
            .last()
            .is_some_and(|e| e.provenance == Provenance::Padding)
            && !ids.is_empty()
        {
            return Err(DomainError::Invariant(
                "matched entries cannot follow padding".into(),
            ));
        }
        self.append(ids, Provenance::Matched)
    }

    pub fn append_padding(&mut self, ids: &[CandidateId]) -> Result<usize, DomainError> {
        self.append(ids, Provenance::Padding)
    }

    fn append(&mut self, ids: &[CandidateId], provenance: Provenance) -> Result<usize, DomainError> {
        let mut incoming = HashSet::with_capacity(ids.len());
        for id in ids {
            if self.seen.contains(id) || !incoming.insert(id) {
                return Err(DomainError::DuplicateCandidate(id.clone()));
            }
        }
        let room = self.capacity - self.entries.len();
        let taken = ids.len().min(room);
        for id in &ids[..taken] {
            self.seen.insert(id.clone());
            self.entries.push(SubmissionEntry {
                id: id.clone(),
                provenance,
            });
        }
        Ok(taken)
    }

    pub fn entries(&self) -> &[SubmissionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn contains(&self, id: &CandidateId) -> bool {
        self.seen.contains(id)
    }

    pub fn matched_len(&self) -> usize {
        self.entries
            .iter()
            .take_while(|e| e.provenance == Provenance::Matched)
            .count()
    }

    pub fn ids(&self) -> impl Iterator<Item = &CandidateId> {
        self.entries.iter().map(|e| &e.id)
    }
}

/// Candidates already examined by the reasoning agent in this run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExclusionSet {
    ids: HashSet<CandidateId>,
}

impl ExclusionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Excludes every examined id. Re-excluding an id is an orchestrator bug
    /// and fails without modifying the set.
    pub fn exclude(&mut self, examined: &[RankedEntry]) -> Result<(), DomainError> {
        let mut incoming = HashSet::with_capacity(examined.len());
        for e in examined {
            if self.ids.contains(&e.id) || !incoming.insert(&e.id) {
                return Err(DomainError::Invariant(format!(
                    "candidate {} examined twice",
                    e.id
                )));
            }
        }
        self.ids.extend(examined.iter().map(|e| e.id.clone()));
        Ok(())
    }

    pub fn contains(&self, id: &CandidateId) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Loop bounds: iterations `T`, examination length `k`, submission length `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct EngineConfig {
    #[serde(rename = "T")]
    max_iterations: usize,
    #[serde(rename = "k")]
    examination_length: usize,
    #[serde(rename = "L")]
    submission_length: usize,
}

#[derive(Deserialize)]
struct RawConfig {
    #[serde(rename = "T")]
    max_iterations: usize,
    #[serde(rename = "k")]
    examination_length: usize,
    #[serde(rename = "L")]
    submission_length: usize,
}

impl TryFrom<RawConfig> for EngineConfig {
    type Error = DomainError;

    fn try_from(raw: RawConfig) -> Result<Self, Self::Error> {
        EngineConfig::new(
            raw.max_iterations,
            raw.examination_length,
            raw.submission_length,
        )
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            examination_length: 50,
            submission_length: 1000,
        }
    }
}

impl EngineConfig {
    pub fn new(
        max_iterations: usize,
        examination_length: usize,
        submission_length: usize,
    ) -> Result<Self, DomainError> {
        for (name, v) in [
            ("T", max_iterations),
            ("k", examination_length),
            ("L", submission_length),
        ] {
            if v == 0 {
                return Err(DomainError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(Self {
            max_iterations,
            examination_length,
            submission_length,
        })
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn examination_length(&self) -> usize {
        self.examination_length
    }

    pub fn submission_length(&self) -> usize {
        self.submission_length
    }
}
