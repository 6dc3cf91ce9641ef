//! OpenAI-compatible HTTP backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    Completion, CompletionRequest, Embedder, LlmBackend, ProviderError, TokenUsage, Vector,
};

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build()
        .into()
}

fn classify(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ProviderError::Transport(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => ProviderError::Rejected(format!("HTTP {code}")),
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Chat-completions endpoint (`{base_url}/chat/completions`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenAiChat {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LlmBackend for OpenAiChat {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "frequency_penalty": request.params.frequency_penalty,
            "presence_penalty": request.params.presence_penalty,
            "max_tokens": request.params.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut response = agent(self.timeout_secs)
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(classify)?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let usage = parsed
            .usage
            .map(|u| TokenUsage::new(u.prompt_tokens, u.completion_tokens))
            .unwrap_or_default();
        Ok(Completion { text, usage })
    }
}

/// Embeddings endpoint (`{base_url}/embeddings`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenAiEmbedder {
    pub base_url: String,
    pub model: String,
    pub dim: usize,
    #[serde(skip_serializing)]
    pub api_key: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

impl Embedder for OpenAiEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let mut response = agent(self.timeout_secs)
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(json!({"model": self.model, "input": texts}))
            .map_err(classify)?;
        let mut parsed: EmbeddingResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Embedding(e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.len() != texts.len()
            || parsed.data.iter().any(|d| d.embedding.len() != self.dim)
        {
            return Err(ProviderError::Embedding(
                "dimension or count mismatch".into(),
            ));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|d| Vector(d.embedding))
            .collect())
    }
}
