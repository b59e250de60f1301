use std::sync::{Condvar, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, EmbeddingVector, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_initial_secs: f64,
    pub backoff_multiplier: f64,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            chat_model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-ada-002".into(),
            request_timeout_secs: 60.0,
            max_retries: 3,
            backoff_initial_secs: 1.0,
            backoff_multiplier: 2.0,
            max_in_flight: 8,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.request_timeout_secs > 0.0) {
            return Err(LlmError::Config("request_timeout_secs must be > 0".into()));
        }
        if self.backoff_initial_secs < 0.0 || self.backoff_multiplier < 1.0 {
            return Err(LlmError::Config(
                "backoff must have initial >= 0 and multiplier >= 1".into(),
            ));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let secs = self.backoff_initial_secs * self.backoff_multiplier.powi(retry as i32 - 1);
        Duration::from_secs_f64(secs)
    }
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for OpenAI-compatible `/chat/completions` and `/embeddings`.
pub struct OpenAiBackend {
    config: BackendConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
    embedding_dim: OnceLock<usize>,
}

fn excerpt(body: &str) -> String {
    body.chars().take(500).collect()
}

impl OpenAiBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: BackendConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            LlmError::Config(format!("environment variable {} is not set", config.api_key_env))
        })?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: BackendConfig, api_key: impl Into<String>) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight,
            },
            config,
            api_key: api_key.into(),
            client,
            embedding_dim: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn post(&self, endpoint: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), endpoint);
        let _permit = self.in_flight.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            tracing::debug!(%url, authorization = "Bearer [REDACTED]", body = %body, "request");
            let result = self
                .client
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(body)
                .send();
            let retryable = match result {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    tracing::debug!(status = status.as_u16(), body = %excerpt(&text), "response");
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| LlmError::Malformed(e.to_string()));
                    }
                    let err = LlmError::Service {
                        status: status.as_u16(),
                        body: excerpt(&text),
                    };
                    if status.as_u16() == 429 || status.is_server_error() {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(e) => LlmError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.config.max_retries {
                return Err(retryable);
            }
            let delay = self.config.backoff(attempt);
            tracing::warn!(attempt, ?delay, error = %retryable, "retrying");
            thread::sleep(delay);
        }
    }
}

impl Backend for OpenAiBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        req.validate()?;
        let body = json!({
            "model": self.config.chat_model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let start = Instant::now();
        let resp = self.post("chat/completions", &body)?;
        let text = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?;
        tracing::info!(
            tag = %req.tag,
            prompt_tokens = resp["usage"]["prompt_tokens"].as_u64(),
            completion_tokens = resp["usage"]["completion_tokens"].as_u64(),
            latency_ms = start.elapsed().as_millis() as u64,
            "chat"
        );
        Ok(text.to_string())
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let body = json!({ "model": self.config.embedding_model, "input": text });
        let resp = self.post("embeddings", &body)?;
        let values: Vec<f64> = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| LlmError::Malformed("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| LlmError::Malformed("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(LlmError::Malformed("empty embedding".into()));
        }
        let dim = *self.embedding_dim.get_or_init(|| values.len());
        if dim != values.len() {
            return Err(LlmError::Malformed(format!(
                "embedding dimension changed from {dim} to {}",
                values.len()
            )));
        }
        Ok(EmbeddingVector::new(values))
    }

    fn encoder_name(&self) -> &str {
        &self.config.embedding_model
    }
}
