//! Prompt templates, a chat-completions client, and parsers for the three
//! answer grammars (action JSON, verdict word or JSON, `<reformulate>` block).

mod client;
mod parse;
mod prompt;

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub use client::{
    parse_envelope, Attachment, ChatClient, ChatMessage, ChatRequest, ClientConfig,
    CompletionResponse, API_KEY_ENV, ENDPOINT_ENV, MODEL_ENV,
};
pub use parse::{
    find_negation, first_json_object, parse_action, parse_reformulation,
    parse_reformulation_with_cap, parse_verdict, Grammar, ParseFailure, ParsedAction,
    ParsedReformulation, ParsedVerdict, DEFAULT_NEGATIONS, DEFAULT_WORD_CAP,
};
pub use prompt::{serialize_memory, PromptSet, PromptTemplate, TemplateName, EMPTY_MEMORY, PLACEHOLDERS};

#[cfg(test)]
pub(crate) use client::tests as stub;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("backend returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response envelope: {0}")]
    Envelope(String),
}

impl TransportError {
    /// Worth retrying without changing the request.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout(_) | TransportError::Connect(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Envelope(_) => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("no binding for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template {template:?} uses undeclared placeholder {{{placeholder}}}")]
    UnknownPlaceholder {
        template: TemplateName,
        placeholder: String,
    },
    #[error("prompt asset {path}: {reason}")]
    Asset { path: PathBuf, reason: String },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}
