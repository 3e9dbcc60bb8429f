//! Agents backed by a chat-completions endpoint.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    AgentContext, AgentError, OrchestrationAgent, QueryEncoder, ReasoningAgent,
    ReformulationAgent, ReformulationRequest, Verdict,
};
use crate::domain::{Action, ActionKind, EvalSummary, Query, RankedEntry};
use crate::llm_gateway::{
    find_negation, parse_action, parse_reformulation_with_cap, parse_verdict, Attachment,
    ChatClient, CompletionResponse, Grammar, ParseFailure, PromptSet, TemplateName,
    TransportError, DEFAULT_NEGATIONS, DEFAULT_WORD_CAP,
};

/// Reasoning recorded when the orchestrator could not parse two answers.
pub const PARSE_FAILURE_DEFAULT: &str = "parse-failure default";
const NO_REASONING: &str = "(no reasoning given)";

fn call(
    client: &ChatClient,
    ctx: &AgentContext<'_>,
    prompt: String,
    temperature: f64,
    attachments: Vec<Attachment>,
) -> Result<CompletionResponse, AgentError> {
    let mut request = client.request(prompt, temperature);
    request.attachments = attachments;
    let response = client.complete(&request)?;
    ctx.usage.record(
        response.prompt_tokens,
        response.completion_tokens,
        response.latency_ms,
    );
    Ok(response)
}

/// Where a candidate's video lives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLocator {
    pub root: PathBuf,
    /// File extension without the dot, e.g. `mp4`.
    pub extension: String,
}

impl VideoLocator {
    pub fn new(root: impl Into<PathBuf>, extension: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            extension: extension.into(),
        }
    }

    pub fn video_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.{}", self.extension))
    }

    /// Directory of pre-extracted frames for `id`.
    pub fn frame_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }
}

/// How the video reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum VideoEvidence {
    /// Only the path appears in the prompt; the backend fetches the video.
    Path,
    /// `count` frames sampled uniformly from the candidate's frame directory
    /// are attached as images.
    Frames { count: usize },
}

/// `count` evenly spaced picks from `n` items, centered within each stride.
pub fn uniform_sample(n: usize, count: usize) -> Vec<usize> {
    if n == 0 || count == 0 {
        return Vec::new();
    }
    if count >= n {
        return (0..n).collect();
    }
    (0..count)
        .map(|i| ((2 * i + 1) * n) / (2 * count))
        .collect()
}

fn frames(dir: &Path, count: usize) -> Result<Vec<Attachment>, AgentError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AgentError::Backend(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png" | "webp"))
        })
        .collect();
    files.sort();
    uniform_sample(files.len(), count)
        .into_iter()
        .map(|i| {
            Attachment::image_file(&files[i])
                .map_err(|e| AgentError::Backend(format!("{}: {e}", files[i].display())))
        })
        .collect()
}

/// Judges one candidate per call with the single-word or JSON verdict prompt.
pub struct LlmReasoner {
    client: Arc<ChatClient>,
    prompts: Arc<PromptSet>,
    locator: VideoLocator,
    evidence: VideoEvidence,
    with_reasoning: bool,
}

impl LlmReasoner {
    pub fn new(client: Arc<ChatClient>, prompts: Arc<PromptSet>, locator: VideoLocator) -> Self {
        Self {
            client,
            prompts,
            locator,
            evidence: VideoEvidence::Path,
            with_reasoning: false,
        }
    }

    /// Use the JSON prompt that asks for a reason with each verdict.
    pub fn with_reasoning(mut self, on: bool) -> Self {
        self.with_reasoning = on;
        self
    }

    pub fn with_evidence(mut self, evidence: VideoEvidence) -> Self {
        self.evidence = evidence;
        self
    }
}

impl ReasoningAgent for LlmReasoner {
    fn judge_candidate(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        candidate: &RankedEntry,
    ) -> Result<Verdict, AgentError> {
        let id = candidate.id.as_str();
        let path = self.locator.video_path(id);
        let template = if self.with_reasoning {
            TemplateName::EvalReasoning
        } else {
            TemplateName::Eval
        };
        let path_text = path.to_string_lossy();
        let prompt = self.prompts.render(
            template,
            &[("query", query.text()), ("Video_path", &path_text)],
        )?;
        let attachments = match self.evidence {
            VideoEvidence::Path => Vec::new(),
            VideoEvidence::Frames { count } => frames(&self.locator.frame_dir(id), count)?,
        };
        let response = call(&self.client, ctx, prompt, 0.0, attachments)?;
        let parsed = parse_verdict(&response.content, self.with_reasoning)?;
        Ok(Verdict {
            candidate: candidate.id.clone(),
            matched: parsed.matched,
            reasoning: parsed.reasoning,
        })
    }
}

/// Asks the model whether to exploit or explore.
pub struct LlmOrchestrator {
    client: Arc<ChatClient>,
    prompts: Arc<PromptSet>,
}

impl LlmOrchestrator {
    pub fn new(client: Arc<ChatClient>, prompts: Arc<PromptSet>) -> Self {
        Self { client, prompts }
    }
}

impl OrchestrationAgent for LlmOrchestrator {
    fn decide(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        summary: &EvalSummary,
    ) -> Result<Action, AgentError> {
        let summary = summary.to_string();
        let prompt = self.prompts.render(
            TemplateName::Action,
            &[("query", query.text()), ("eval_summary", &summary)],
        )?;
        for attempt in 1..=2 {
            let response = call(&self.client, ctx, prompt.clone(), 0.0, Vec::new())?;
            match parse_action(&response.content) {
                Ok(parsed) => {
                    let reasoning = if parsed.reasoning.trim().is_empty() {
                        NO_REASONING.to_string()
                    } else {
                        parsed.reasoning
                    };
                    return Ok(Action::new(parsed.kind, reasoning));
                }
                Err(err) => {
                    tracing::debug!(topic = ctx.topic, attempt, %err, "action answer unparseable")
                }
            }
        }
        Ok(Action::new(ActionKind::Exploit, PARSE_FAILURE_DEFAULT))
    }
}

/// Rewrites the query with the plain or memory-aware reformulation prompt.
pub struct LlmReformulator {
    client: Arc<ChatClient>,
    prompts: Arc<PromptSet>,
    use_memory: bool,
    temperature: f64,
    word_cap: usize,
    negations: Vec<String>,
}

impl LlmReformulator {
    pub fn new(client: Arc<ChatClient>, prompts: Arc<PromptSet>) -> Self {
        Self {
            client,
            prompts,
            use_memory: true,
            temperature: 0.7,
            word_cap: DEFAULT_WORD_CAP,
            negations: DEFAULT_NEGATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `false` selects the prompt without the precision history.
    pub fn with_memory(mut self, on: bool) -> Self {
        self.use_memory = on;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_word_cap(mut self, cap: usize) -> Self {
        self.word_cap = cap;
        self
    }

    pub fn with_negations(mut self, words: Vec<String>) -> Self {
        self.negations = words;
        self
    }

    fn prompt(&self, request: &ReformulationRequest<'_>) -> Result<String, AgentError> {
        let original = request.original.text();
        let current = request.previous.text();
        Ok(if self.use_memory {
            let memory = crate::llm_gateway::serialize_memory(request.memory);
            self.prompts.render(
                TemplateName::RefineMemory,
                &[
                    ("memory_bank", &memory),
                    ("action_decision_reasoning", request.decision_reasoning),
                    ("original_query", original),
                    ("query", current),
                ],
            )?
        } else {
            self.prompts.render(
                TemplateName::Refine,
                &[("original_query", original), ("query", current)],
            )?
        })
    }

    fn accept(&self, raw: &str, previous: &str) -> Result<Query, AgentError> {
        let parsed = parse_reformulation_with_cap(raw, self.word_cap)?;
        if let Some(word) = find_negation(&parsed.text, &self.negations) {
            return Err(ParseFailure {
                grammar: Grammar::Reformulation,
                reason: format!("negation word `{word}`"),
            }
            .into());
        }
        if parsed.text.trim() == previous.trim() {
            return Err(AgentError::DuplicateReformulation);
        }
        let reasoning = parsed.reasoning.unwrap_or_else(|| NO_REASONING.to_string());
        Ok(Query::reformulated(parsed.text, reasoning)?)
    }
}

impl ReformulationAgent for LlmReformulator {
    fn reformulate(
        &self,
        ctx: &AgentContext<'_>,
        request: &ReformulationRequest<'_>,
    ) -> Result<Query, AgentError> {
        let prompt = self.prompt(request)?;
        for attempt in 1..=2 {
            let response = call(&self.client, ctx, prompt.clone(), self.temperature, Vec::new())?;
            match self.accept(&response.content, request.previous.text()) {
                Ok(q) => return Ok(q),
                Err(err) => {
                    tracing::debug!(topic = ctx.topic, attempt, %err, "reformulation rejected")
                }
            }
        }
        Err(AgentError::DuplicateReformulation)
    }
}

/// Query encoder calling an OpenAI-style `/embeddings` endpoint.
pub struct HttpEncoder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    http: reqwest::blocking::Client,
}

impl HttpEncoder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(crate::llm_gateway::API_KEY_ENV).ok(),
            timeout,
            http: reqwest::blocking::Client::new(),
        }
    }
}

impl QueryEncoder for HttpEncoder {
    fn encode(&self, _ctx: &AgentContext<'_>, text: &str) -> Result<Vec<f32>, AgentError> {
        let mut builder = self
            .http
            .post(&self.endpoint)
            .timeout(self.timeout)
            .json(&json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| -> AgentError {
            crate::llm_gateway::GatewayError::from(if e.is_timeout() {
                TransportError::Timeout(self.timeout)
            } else {
                TransportError::Connect(e.to_string())
            })
            .into()
        };
        let response = builder.send().map_err(transport)?;
        let status = response.status();
        let body = response.text().map_err(transport)?;
        if !status.is_success() {
            return Err(crate::llm_gateway::GatewayError::from(TransportError::Status {
                code: status.as_u16(),
                body: body.chars().take(512).collect(),
            })
            .into());
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| AgentError::Backend(format!("embedding response: {e}")))?;
        value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .and_then(|xs| xs.iter().map(|x| x.as_f64().map(|f| f as f32)).collect())
            .ok_or_else(|| AgentError::Backend("embedding response lacks data[0].embedding".into()))
    }
}
