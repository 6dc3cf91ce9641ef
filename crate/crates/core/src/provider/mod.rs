//! Language-model and embedding backends.
//!
//! Backends are plain trait objects. Pipeline code never talks to them
//! directly: completions go through [`LlmClient`] / [`QuestionLlm`], which
//! audit every prompt and account usage per module.

mod client;
mod embed;
mod fixture;
mod http;
mod usage;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::privacy::LeakReport;

pub use client::{LlmClient, QuestionLlm, RetryPolicy};
pub use embed::{cosine, tokenize, CachedEmbedder, Embedder, HashingEmbedder, Vector};
pub use fixture::{
    normalize_prompt, prompt_digest, FixtureRecord, PlaybackLlm, RecordingLlm, ScriptedLlm,
};
pub use http::{OpenAiChat, OpenAiEmbedder};
pub use usage::{CostReport, ModuleUsage, TokenUsage};

/// Which pipeline stage issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleTag {
    RelationRetrieval,
    EntityAbstraction,
    StructureAbstraction,
    Sufficiency,
    AnswerExtraction,
    ChainOfThought,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 6] = [
        ModuleTag::RelationRetrieval,
        ModuleTag::EntityAbstraction,
        ModuleTag::StructureAbstraction,
        ModuleTag::Sufficiency,
        ModuleTag::AnswerExtraction,
        ModuleTag::ChainOfThought,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::RelationRetrieval => "relation_retrieval",
            ModuleTag::EntityAbstraction => "entity_abstraction",
            ModuleTag::StructureAbstraction => "structure_abstraction",
            ModuleTag::Sufficiency => "sufficiency",
            ModuleTag::AnswerExtraction => "answer_extraction",
            ModuleTag::ChainOfThought => "chain_of_thought",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    #[serde(default)]
    pub frequency_penalty: f64,
    #[serde(default)]
    pub presence_penalty: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    256
}

impl DecodingParams {
    /// Temperature 0, used for structure abstraction and generation.
    pub fn deterministic() -> Self {
        Self::default()
    }

    /// Temperature 0.4, used for relation retrieval and entity abstraction.
    pub fn exploratory() -> Self {
        Self {
            temperature: 0.4,
            ..Self::default()
        }
    }
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            max_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub module: ModuleTag,
    pub prompt: &'a str,
    pub params: DecodingParams,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("no fixture for {module} prompt {digest}")]
    UnmatchedFixture { module: ModuleTag, digest: String },
    #[error("prompt for {module} leaks {} protected name(s)", report.violations.len())]
    Leak {
        module: ModuleTag,
        report: LeakReport,
    },
    #[error("embedding failure: {0}")]
    Embedding(String),
    #[error("fixture file {path}: {reason}")]
    Fixture { path: String, reason: String },
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// A text-completion backend.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError>;

    /// Deterministic backends are never retried.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Whitespace token count, the usage measure for fixture backends.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
