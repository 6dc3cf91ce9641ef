use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::warn;

use super::{
    Completion, CompletionRequest, CostReport, DecodingParams, LlmBackend, ModuleTag, ProviderError,
};
use crate::privacy::{AllowList, LeakPolicy, PrivacyGuard};

/// Retry schedule for transient transport errors.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Session-wide access to a completion backend. The only way to issue a
/// completion is through a [`QuestionLlm`], which audits the prompt first.
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    guard: PrivacyGuard,
    retry: RetryPolicy,
    ledger: Mutex<CostReport>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>, guard: PrivacyGuard) -> Self {
        Self {
            backend,
            guard,
            retry: RetryPolicy::default(),
            ledger: Mutex::new(CostReport::default()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn guard(&self) -> &PrivacyGuard {
        &self.guard
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Opens an audited handle for one question.
    pub fn for_question(&self, allow: AllowList) -> QuestionLlm<'_> {
        QuestionLlm {
            client: self,
            allow,
            usage: Mutex::new(CostReport::default()),
        }
    }

    /// Totals over every completion since the session started.
    pub fn usage_report(&self) -> CostReport {
        self.ledger.lock().expect("ledger poisoned").clone()
    }

    /// Counts finished questions toward per-question averages.
    pub fn add_questions(&self, n: u64) {
        self.ledger.lock().expect("ledger poisoned").questions += n;
    }

    fn call_backend(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let retries = if self.backend.is_deterministic() {
            0
        } else {
            self.retry.retries
        };
        let mut attempt = 0;
        loop {
            match self.backend.complete(request) {
                Err(e) if e.is_transient() && attempt < retries => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    warn!(
                        "{} call failed ({e}); retrying in {delay:?}",
                        request.module
                    );
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Per-question completion handle carrying that question's allow list.
pub struct QuestionLlm<'a> {
    client: &'a LlmClient,
    allow: AllowList,
    usage: Mutex<CostReport>,
}

impl QuestionLlm<'_> {
    pub fn allow_list(&self) -> &AllowList {
        &self.allow
    }

    /// Audits `prompt`, then calls the backend. Usage is recorded for the
    /// question and the session, including empty completions.
    pub fn complete(
        &self,
        module: ModuleTag,
        prompt: &str,
        params: DecodingParams,
    ) -> Result<Completion, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let report = self
            .client
            .guard
            .check(module.as_str(), prompt, &self.allow);
        if !report.is_clean() && self.client.guard.policy() == LeakPolicy::Block {
            return Err(ProviderError::Leak { module, report });
        }
        let completion = self.client.call_backend(&CompletionRequest {
            module,
            prompt,
            params,
        })?;
        self.usage
            .lock()
            .expect("usage poisoned")
            .record(module, completion.usage);
        self.client
            .ledger
            .lock()
            .expect("ledger poisoned")
            .record(module, completion.usage);
        if completion.text.trim().is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok(completion)
    }

    pub fn usage(&self) -> CostReport {
        self.usage.lock().expect("usage poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;
    use crate::graph::Mid;
    use crate::privacy::PrivacyMap;
    use crate::provider::{ScriptedLlm, TokenUsage};

    fn guard() -> PrivacyGuard {
        PrivacyGuard::new(
            PrivacyMap::from_pairs([(Mid::new("m.1").unwrap(), "Acme".to_string())]),
            LeakPolicy::Block,
        )
    }

    struct Flaky {
        failures: AtomicU32,
    }

    impl LlmBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
            if self.failures.fetch_sub(1, Ordering::SeqCst) > 0 {
                Err(ProviderError::Transport("reset".into()))
            } else {
                Ok(Completion {
                    text: "ok".into(),
                    usage: TokenUsage::new(1, 1),
                })
            }
        }
    }

    #[test]
    fn leaking_prompt_is_blocked_and_not_billed() {
        let client = LlmClient::new(Arc::new(ScriptedLlm::new(|_, _| Some("x".into()))), guard());
        let q = client.for_question(AllowList::default());
        let err = q.complete(
            ModuleTag::Sufficiency,
            "Tell me about Acme",
            DecodingParams::default(),
        );
        assert!(matches!(err, Err(ProviderError::Leak { .. })));
        assert_eq!(client.usage_report().llm_calls, 0);
        assert_eq!(client.guard().log().total_violations(), 1);
    }

    #[test]
    fn allowed_topic_passes() {
        let client = LlmClient::new(
            Arc::new(ScriptedLlm::new(|_, _| Some("fine".into()))),
            guard(),
        );
        let q = client.for_question(AllowList::new(["Acme"]));
        let c = q
            .complete(
                ModuleTag::Sufficiency,
                "Tell me about Acme",
                DecodingParams::default(),
            )
            .unwrap();
        assert_eq!(c.text, "fine");
        assert_eq!(q.usage().llm_calls, 1);
        assert_eq!(client.usage_report().input_tokens, 4);
    }

    #[test]
    fn transient_errors_are_retried() {
        let backend = Arc::new(Flaky {
            failures: AtomicU32::new(2),
        });
        let client = LlmClient::new(backend, guard()).with_retry(RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(1),
        });
        let q = client.for_question(AllowList::default());
        assert_eq!(
            q.complete(ModuleTag::Sufficiency, "hi", DecodingParams::default())
                .unwrap()
                .text,
            "ok"
        );
    }

    #[test]
    fn retries_are_bounded() {
        let backend = Arc::new(Flaky {
            failures: AtomicU32::new(10),
        });
        let client = LlmClient::new(backend, guard()).with_retry(RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(1),
        });
        let q = client.for_question(AllowList::default());
        assert!(matches!(
            q.complete(ModuleTag::Sufficiency, "hi", DecodingParams::default()),
            Err(ProviderError::Transport(_))
        ));
    }

    #[test]
    fn empty_completion_is_an_error_but_billed() {
        let client = LlmClient::new(
            Arc::new(ScriptedLlm::new(|_, _| Some("  ".into()))),
            guard(),
        );
        let q = client.for_question(AllowList::default());
        assert!(matches!(
            q.complete(ModuleTag::Sufficiency, "hi", DecodingParams::default()),
            Err(ProviderError::EmptyCompletion)
        ));
        assert_eq!(q.usage().llm_calls, 1);
    }
}
