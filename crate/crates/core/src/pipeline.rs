//! End-to-end question answering with user-side de-anonymization.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::context::QuestionContext;
use crate::error::PipelineError;
use crate::generator::{parse_verdict, Stage};
use crate::graph::{GraphHandle, Mid, MidPattern};
use crate::privacy::{deanonymize_answers, AllowList, NamedAnswer, PrivacyMap};
use crate::prompt::PromptSet;
use crate::provider::{DecodingParams, Embedder, LlmClient, ModuleTag, ProviderError};
use crate::relation::AbstractionSettings;
use crate::retrieval::{run, EngineSettings, RetrievalOutcome, RetrievalParams};

/// Module switches. Relation retrieval cannot be turned off: every later
/// stage consumes its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub relation_retrieval: bool,
    pub structure_abstraction: bool,
    pub relation_filter: bool,
    pub entity_abstraction: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            relation_retrieval: true,
            structure_abstraction: true,
            relation_filter: true,
            entity_abstraction: true,
        }
    }
}

impl Ablation {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.relation_retrieval {
            return Err(PipelineError::Config(
                "relation retrieval cannot be disabled; the other modules depend on it".into(),
            ));
        }
        Ok(())
    }

    pub fn engine_settings(
        &self,
        params: RetrievalParams,
        top_k: usize,
        fused_generator: bool,
    ) -> Result<EngineSettings, PipelineError> {
        self.validate()?;
        Ok(EngineSettings {
            params,
            abstraction: AbstractionSettings {
                top_k,
                filter: self.relation_filter,
                abstraction: self.entity_abstraction,
            },
            structure_abstraction: self.structure_abstraction,
            fused_generator,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicEntity {
    pub name: String,
    pub mid: Mid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question: String,
    pub answers: Vec<NamedAnswer>,
    pub outcome: RetrievalOutcome,
}

impl QuestionResult {
    /// Run log: one JSON line per iteration, then a summary line.
    pub fn run_log(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .outcome
            .trace
            .iter()
            .map(|rec| {
                json!({
                    "kind": "iteration",
                    "question": self.question,
                    "iteration": rec.iteration,
                    "topic_entities": rec.topic_entities,
                    "selected": rec.selected.iter().map(|s| json!({
                        "triplet": s.triplet.to_string(),
                        "score": s.score,
                    })).collect::<Vec<_>>(),
                    "flag": rec.flag,
                })
                .to_string()
            })
            .collect();
        lines.push(
            json!({
                "kind": "final",
                "question": self.question,
                "concept_path": self.outcome.path.canonical(),
                "iterations": self.outcome.iterations,
                "forced": self.outcome.forced,
                "raw_answers": self.outcome.answers,
                "answers": self.answers.iter().map(|a| &a.text).collect::<Vec<_>>(),
                "evidence": self.outcome.evidence.iter().map(ToString::to_string).collect::<Vec<_>>(),
                "cost": self.outcome.cost,
            })
            .to_string(),
        );
        lines
    }
}

/// A configured question-answering session.
pub struct Pipeline {
    pub graph: GraphHandle,
    pub client: LlmClient,
    pub embedder: Arc<dyn Embedder>,
    pub prompts: PromptSet,
    pub mid_pattern: MidPattern,
    pub settings: EngineSettings,
}

impl Pipeline {
    fn allow_list(topics: &[TopicEntity]) -> AllowList {
        AllowList::new(topics.iter().map(|t| t.name.clone()))
    }

    /// Checks every topic identifier exists before anything reaches the
    /// model.
    pub fn validate_topics(&self, topics: &[TopicEntity]) -> Result<(), PipelineError> {
        if topics.is_empty() {
            return Err(PipelineError::Config(
                "question has no topic entities".into(),
            ));
        }
        for topic in topics {
            if !self.graph.contains_entity(&topic.mid)? {
                return Err(PipelineError::Config(format!(
                    "topic entity {} ({}) is not in the graph",
                    topic.mid, topic.name
                )));
            }
        }
        Ok(())
    }

    pub fn answer_question(
        &self,
        question: &str,
        topics: &[TopicEntity],
    ) -> Result<QuestionResult, PipelineError> {
        self.validate_topics(topics)?;
        let llm = self.client.for_question(Self::allow_list(topics));
        let ctx = QuestionContext {
            llm: &llm,
            embedder: self.embedder.as_ref(),
            prompts: &self.prompts,
            mid_pattern: &self.mid_pattern,
        };
        let named: Vec<(Mid, String)> = topics
            .iter()
            .map(|t| (t.mid.clone(), t.name.clone()))
            .collect();
        let outcome = run(&self.graph, ctx, question, &named, &self.settings)?;
        self.client.add_questions(1);
        let answers = self.deanonymize(&outcome.answers)?;
        Ok(QuestionResult {
            question: question.to_string(),
            answers,
            outcome,
        })
    }

    /// Maps identifiers in `answers` back to names. Remote graphs have no
    /// enumerable name table, so their names are looked up on demand.
    pub fn deanonymize(&self, answers: &[String]) -> Result<Vec<NamedAnswer>, PipelineError> {
        let map = self.client.guard().map();
        if !self.graph.is_remote() {
            return Ok(deanonymize_answers(answers, map, &self.mid_pattern));
        }
        let mids: Vec<Mid> = answers
            .iter()
            .flat_map(|a| {
                self.mid_pattern
                    .find_all(a)
                    .into_iter()
                    .filter_map(|(_, m)| Mid::new(m).ok())
            })
            .collect();
        let mut local =
            PrivacyMap::from_pairs(map.entries().map(|(m, n)| (m.clone(), n.to_string())));
        local.resolve_missing(&self.graph, &mids)?;
        Ok(deanonymize_answers(answers, &local, &self.mid_pattern))
    }

    /// Question-only chain-of-thought baseline; answers are free-text names.
    pub fn chain_of_thought(
        &self,
        question: &str,
        topics: &[TopicEntity],
    ) -> Result<Vec<String>, PipelineError> {
        let llm = self.client.for_question(Self::allow_list(topics));
        let prompt = self
            .prompts
            .chain_of_thought
            .render(&[("question", question)])?;
        let reply = match llm.complete(
            ModuleTag::ChainOfThought,
            &prompt,
            DecodingParams::deterministic(),
        ) {
            Ok(c) => c.text,
            Err(ProviderError::EmptyCompletion) => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(parse_verdict(&reply, Stage::Answer)
            .map(|v| v.answers)
            .unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_retrieval_is_mandatory() {
        let ablation = Ablation {
            relation_retrieval: false,
            ..Ablation::default()
        };
        let err = ablation
            .engine_settings(RetrievalParams::default(), 5, false)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(Ablation::default().validate().is_ok());
    }
}
