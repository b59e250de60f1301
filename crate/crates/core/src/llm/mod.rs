//! Text generation and embedding backends.
//!
//! Everything that talks to a model goes through [`Backend`]. Two
//! implementations ship: [`OpenAiBackend`] for OpenAI-compatible HTTP
//! services and [`MockBackend`], a deterministic scripted stand-in.

mod mock;
mod openai;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{hash_embedding, MockBackend, MockRule, MockScript};
pub use openai::{BackendConfig, OpenAiBackend};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned status {status}: {body}")]
    Service { status: u16, body: String },
    #[error("mock script has no rule for tag `{tag}`")]
    ScriptMiss { tag: String },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Identifies the calling pipeline stage, e.g. `answer.diagnosis`.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            messages: Vec::new(),
            temperature: 0.0,
            max_output_tokens: 1024,
            tag: tag.into(),
        }
    }

    pub fn system(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::System,
            content: content.into(),
        });
        self
    }

    pub fn user(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::User,
            content: content.into(),
        });
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => return Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role == Role::Assistant => {
                return Err(LlmError::InvalidRequest(
                    "first message must be system or user".into(),
                ))
            }
            _ => {}
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message contents joined, used for mock matching and audit logs.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// A text generation and embedding service.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError>;

    /// Encoder identity recorded in every vector base built with this backend.
    fn encoder_name(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        (**self).chat(req)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        (**self).embed(text)
    }

    fn encoder_name(&self) -> &str {
        (**self).encoder_name()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        (**self).chat(req)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        (**self).embed(text)
    }

    fn encoder_name(&self) -> &str {
        (**self).encoder_name()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        (**self).chat(req)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        (**self).embed(text)
    }

    fn encoder_name(&self) -> &str {
        (**self).encoder_name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new("t").validate().is_err());
        assert!(ChatRequest::new("t").user("hi").validate().is_ok());
        let mut r = ChatRequest::new("t").user("hi");
        r.messages[0].role = Role::Assistant;
        assert!(r.validate().is_err());
        assert!(ChatRequest::new("t").user("x").temperature(-1.0).validate().is_err());
        assert!(ChatRequest::new("t").user("x").max_output_tokens(0).validate().is_err());
    }
}
