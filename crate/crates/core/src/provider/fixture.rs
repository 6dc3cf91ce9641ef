//! Deterministic completion backends: keyed playback from a fixture file,
//! scripted responders, and a recorder that produces fixture files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    whitespace_tokens, Completion, CompletionRequest, LlmBackend, ModuleTag, ProviderError,
    TokenUsage,
};

/// Trims and collapses whitespace runs to a single space.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of the normalized prompt.
pub fn prompt_digest(prompt: &str) -> String {
    let digest = Sha256::digest(normalize_prompt(prompt).as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub module: ModuleTag,
    pub completion: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl FixtureRecord {
    pub fn read_jsonl(path: &Path) -> Result<Vec<FixtureRecord>, ProviderError> {
        let fail = |reason: String| ProviderError::Fixture {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| fail(format!("line {}: {e}", i + 1))))
            .collect()
    }

    pub fn write_jsonl(records: &[FixtureRecord], path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r).expect("fixture record serializes"));
            out.push('\n');
        }
        fs::write(path, out)
    }
}

/// Replays recorded completions keyed by `(module, prompt digest)`.
/// Unknown prompts are an error, never improvised.
#[derive(Debug, Clone, Default)]
pub struct PlaybackLlm {
    records: BTreeMap<(ModuleTag, String), FixtureRecord>,
}

impl PlaybackLlm {
    pub fn new(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.module, r.digest.clone()), r))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(FixtureRecord::read_jsonl(path)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl LlmBackend for PlaybackLlm {
    fn name(&self) -> &str {
        "playback"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let digest = prompt_digest(request.prompt);
        let record = self.records.get(&(request.module, digest.clone())).ok_or(
            ProviderError::UnmatchedFixture {
                module: request.module,
                digest,
            },
        )?;
        Ok(Completion {
            text: record.completion.clone(),
            usage: TokenUsage::new(record.input_tokens, record.output_tokens),
        })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

type Script = dyn Fn(ModuleTag, &str) -> Option<String> + Send + Sync;

/// Answers from a pure function of `(module, prompt)`. Usage is counted in
/// whitespace tokens.
#[derive(Clone)]
pub struct ScriptedLlm {
    script: Arc<Script>,
}

impl ScriptedLlm {
    pub fn new(script: impl Fn(ModuleTag, &str) -> Option<String> + Send + Sync + 'static) -> Self {
        Self {
            script: Arc::new(script),
        }
    }
}

impl std::fmt::Debug for ScriptedLlm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScriptedLlm")
    }
}

impl LlmBackend for ScriptedLlm {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let text = (self.script)(request.module, request.prompt).ok_or_else(|| {
            ProviderError::UnmatchedFixture {
                module: request.module,
                digest: prompt_digest(request.prompt),
            }
        })?;
        let usage = TokenUsage::new(whitespace_tokens(request.prompt), whitespace_tokens(&text));
        Ok(Completion { text, usage })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Wraps a backend and keeps a fixture record of every successful call.
pub struct RecordingLlm {
    inner: Arc<dyn LlmBackend>,
    records: Mutex<BTreeMap<(ModuleTag, String), FixtureRecord>>,
}

impl RecordingLlm {
    pub fn new(inner: Arc<dyn LlmBackend>) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    /// Records sorted by `(module, digest)`.
    pub fn records(&self) -> Vec<FixtureRecord> {
        self.records
            .lock()
            .expect("recorder poisoned")
            .values()
            .cloned()
            .collect()
    }
}

impl LlmBackend for RecordingLlm {
    fn name(&self) -> &str {
        "recording"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let completion = self.inner.complete(request)?;
        let digest = prompt_digest(request.prompt);
        self.records.lock().expect("recorder poisoned").insert(
            (request.module, digest.clone()),
            FixtureRecord {
                digest,
                module: request.module,
                completion: completion.text.clone(),
                input_tokens: completion.usage.input_tokens,
                output_tokens: completion.usage.output_tokens,
            },
        );
        Ok(completion)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::DecodingParams;

    fn request(module: ModuleTag, prompt: &str) -> CompletionRequest<'_> {
        CompletionRequest {
            module,
            prompt,
            params: DecodingParams::default(),
        }
    }

    #[test]
    fn digest_ignores_whitespace_layout() {
        assert_eq!(prompt_digest("a  b\n c "), prompt_digest("a b c"));
        assert_ne!(prompt_digest("a b"), prompt_digest("a c"));
    }

    #[test]
    fn playback_by_module_and_digest() {
        let record = FixtureRecord {
            digest: prompt_digest("hello"),
            module: ModuleTag::Sufficiency,
            completion: "{Yes}".into(),
            input_tokens: 10,
            output_tokens: 5,
        };
        let llm = PlaybackLlm::new([record]);
        let c = llm
            .complete(&request(ModuleTag::Sufficiency, "hello"))
            .unwrap();
        assert_eq!(c.text, "{Yes}");
        assert_eq!(c.usage, TokenUsage::new(10, 5));
        assert!(matches!(
            llm.complete(&request(ModuleTag::AnswerExtraction, "hello")),
            Err(ProviderError::UnmatchedFixture { .. })
        ));
    }

    #[test]
    fn recorder_round_trips_through_file() {
        let scripted: Arc<dyn LlmBackend> =
            Arc::new(ScriptedLlm::new(|_, p| Some(format!("echo {p}"))));
        let recorder = RecordingLlm::new(scripted);
        recorder
            .complete(&request(ModuleTag::ChainOfThought, "one two"))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        FixtureRecord::write_jsonl(&recorder.records(), &path).unwrap();
        let playback = PlaybackLlm::from_file(&path).unwrap();
        let c = playback
            .complete(&request(ModuleTag::ChainOfThought, "one   two"))
            .unwrap();
        assert_eq!(c.text, "echo one two");
        assert_eq!(c.usage, TokenUsage::new(2, 3));
    }
}
