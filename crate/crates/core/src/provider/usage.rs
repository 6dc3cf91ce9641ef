use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModuleTag;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
}

impl ModuleUsage {
    fn add(&mut self, other: &ModuleUsage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.total_tokens += other.total_tokens;
    }
}

/// Call and token totals, with a per-module breakdown that always sums to
/// the totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub llm_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    /// Questions covered by this report, for per-question averages.
    pub questions: u64,
    pub per_module: BTreeMap<ModuleTag, ModuleUsage>,
}

impl CostReport {
    pub fn record(&mut self, module: ModuleTag, usage: TokenUsage) {
        let delta = ModuleUsage {
            calls: 1,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            total_tokens: usage.total(),
        };
        self.per_module.entry(module).or_default().add(&delta);
        self.llm_calls += 1;
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
        self.total_tokens += usage.total();
    }

    pub fn merge(&mut self, other: &CostReport) {
        self.llm_calls += other.llm_calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.total_tokens += other.total_tokens;
        self.questions += other.questions;
        for (module, usage) in &other.per_module {
            self.per_module.entry(*module).or_default().add(usage);
        }
    }

    pub fn calls_for(&self, module: ModuleTag) -> u64 {
        self.per_module.get(&module).map_or(0, |u| u.calls)
    }

    /// Averages over `questions` (all zero when no questions were run).
    pub fn per_question(&self) -> AverageCost {
        let n = self.questions as f64;
        let avg = |v: u64| {
            if self.questions == 0 {
                0.0
            } else {
                v as f64 / n
            }
        };
        AverageCost {
            calls: avg(self.llm_calls),
            input_tokens: avg(self.input_tokens),
            output_tokens: avg(self.output_tokens),
            total_tokens: avg(self.total_tokens),
        }
    }

    /// Totals and breakdown agree.
    pub fn is_consistent(&self) -> bool {
        let mut sum = ModuleUsage::default();
        for usage in self.per_module.values() {
            sum.add(usage);
        }
        self.total_tokens == self.input_tokens + self.output_tokens
            && sum.calls == self.llm_calls
            && sum.input_tokens == self.input_tokens
            && sum.output_tokens == self.output_tokens
            && sum.total_tokens == self.total_tokens
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AverageCost {
    pub calls: f64,
    pub input_tokens: f64,
    pub output_tokens: f64,
    pub total_tokens: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additivity() {
        let mut report = CostReport::default();
        report.record(ModuleTag::Sufficiency, TokenUsage::new(10, 5));
        report.record(ModuleTag::AnswerExtraction, TokenUsage::new(20, 7));
        assert_eq!(report.llm_calls, 2);
        assert_eq!(report.input_tokens, 30);
        assert_eq!(report.output_tokens, 12);
        assert_eq!(report.total_tokens, 42);
        assert!(report.is_consistent());
    }

    #[test]
    fn merge_is_additive() {
        let mut a = CostReport::default();
        a.record(ModuleTag::Sufficiency, TokenUsage::new(1, 2));
        a.questions = 1;
        let mut b = CostReport::default();
        b.record(ModuleTag::Sufficiency, TokenUsage::new(3, 4));
        b.record(ModuleTag::ChainOfThought, TokenUsage::new(5, 6));
        b.questions = 1;
        let mut merged = a.clone();
        merged.merge(&b);
        assert_eq!(merged.llm_calls, 3);
        assert_eq!(merged.total_tokens, a.total_tokens + b.total_tokens);
        assert_eq!(merged.calls_for(ModuleTag::Sufficiency), 2);
        assert!(merged.is_consistent());
        assert_eq!(merged.per_question().calls, 1.5);
    }

    #[test]
    fn empty_report_averages_to_zero() {
        assert_eq!(CostReport::default().per_question(), AverageCost::default());
    }
}
