//! Evidence sufficiency check and answer extraction.
//!
//! Replies lead with a brace group: `{Yes}` / `{No}` in the sufficiency
//! stage, `{answer; answer}` in the extraction stage. Answers are
//! identifier-bearing strings; identifiers absent from the evidence are
//! rejected.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::QuestionContext;
use crate::error::PipelineError;
use crate::graph::MidPattern;
use crate::prompt::PromptTemplate;
use crate::provider::{DecodingParams, ModuleTag, ProviderError};
use crate::relation::{first_brace_group, AbstractedTriplet};

const VERDICT_REMINDER: &str = "\nStart your reply with {Yes} or {No}.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    Sufficient,
    Insufficient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorVerdict {
    pub flag: Flag,
    pub answers: Vec<String>,
    pub explanation: String,
}

impl GeneratorVerdict {
    pub fn insufficient() -> Self {
        Self {
            flag: Flag::Insufficient,
            answers: Vec::new(),
            explanation: String::new(),
        }
    }

    pub fn is_sufficient(&self) -> bool {
        self.flag == Flag::Sufficient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sufficiency,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictParseError {
    #[error("no brace group in reply")]
    NoBraceGroup,
    #[error("expected Yes or No, found {0:?}")]
    NotYesNo(String),
}

fn yes_no(content: &str) -> Option<bool> {
    let word = content.trim().trim_end_matches(['.', '!']).trim();
    if word.eq_ignore_ascii_case("yes") {
        Some(true)
    } else if word.eq_ignore_ascii_case("no") {
        Some(false)
    } else {
        None
    }
}

/// Reads the first balanced `{...}` group of a generator reply.
pub fn parse_verdict(text: &str, stage: Stage) -> Result<GeneratorVerdict, VerdictParseError> {
    let (start, end) = first_brace_group(text).ok_or(VerdictParseError::NoBraceGroup)?;
    let content = &text[start + 1..end - 1];
    let explanation = text[end..]
        .trim_start_matches(['.', ' ', '\n'])
        .trim()
        .to_string();
    match stage {
        Stage::Sufficiency => {
            let yes = yes_no(content)
                .ok_or_else(|| VerdictParseError::NotYesNo(content.trim().to_string()))?;
            Ok(GeneratorVerdict {
                flag: if yes {
                    Flag::Sufficient
                } else {
                    Flag::Insufficient
                },
                answers: Vec::new(),
                explanation,
            })
        }
        Stage::Answer => {
            if yes_no(content).is_some() {
                return Ok(GeneratorVerdict {
                    explanation,
                    ..GeneratorVerdict::insufficient()
                });
            }
            let answers: Vec<String> = content
                .split(['\n', ';'])
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(str::to_string)
                .collect();
            Ok(GeneratorVerdict {
                flag: if answers.is_empty() {
                    Flag::Insufficient
                } else {
                    Flag::Sufficient
                },
                answers,
                explanation,
            })
        }
    }
}

/// Evidence lines as shown to the model.
pub fn render_evidence(evidence: &[AbstractedTriplet]) -> String {
    evidence
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

fn strip_parenthetical(answer: &str) -> &str {
    match answer
        .trim()
        .strip_suffix(')')
        .and_then(|s| s.rfind('(').map(|i| &s[..i]))
    {
        Some(base) => base.trim(),
        None => answer.trim(),
    }
}

/// Keeps answers grounded in the evidence or the question. Identifiers must
/// occur in the evidence; identifier-free answers must appear verbatim
/// (case-insensitive) in the evidence text or question.
pub fn filter_fabricated(
    answers: Vec<String>,
    evidence: &[AbstractedTriplet],
    question: &str,
    pattern: &MidPattern,
) -> Vec<String> {
    let known: BTreeSet<&str> = evidence
        .iter()
        .flat_map(|t| [t.head.mid.as_str(), t.tail.mid.as_str()])
        .collect();
    let haystack = format!("{}\n{}", render_evidence(evidence), question).to_lowercase();
    answers
        .into_iter()
        .filter(|answer| {
            let mids = pattern.find_all(answer);
            let grounded = if mids.is_empty() {
                let base = strip_parenthetical(answer).to_lowercase();
                !base.is_empty() && haystack.contains(&base)
            } else {
                mids.iter().all(|(_, m)| known.contains(m))
            };
            if !grounded {
                warn!("generator: dropping answer not grounded in evidence: {answer:?}");
            }
            grounded
        })
        .collect()
}

fn render(
    template: &PromptTemplate,
    question: &str,
    evidence: &[AbstractedTriplet],
) -> Result<String, PipelineError> {
    Ok(template.render(&[
        ("question", question),
        ("triplets", &render_evidence(evidence)),
    ])?)
}

fn ask(
    ctx: &QuestionContext<'_>,
    module: ModuleTag,
    prompt: &str,
) -> Result<Option<String>, ProviderError> {
    match ctx
        .llm
        .complete(module, prompt, DecodingParams::deterministic())
    {
        Ok(c) => Ok(Some(c.text)),
        Err(ProviderError::EmptyCompletion) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the answer-extraction prompt and keeps grounded answers.
fn extract(
    ctx: &QuestionContext<'_>,
    question: &str,
    evidence: &[AbstractedTriplet],
) -> Result<Vec<String>, PipelineError> {
    let prompt = render(&ctx.prompts.answer_extraction, question, evidence)?;
    let answers = ask(ctx, ModuleTag::AnswerExtraction, &prompt)?
        .and_then(|reply| parse_verdict(&reply, Stage::Answer).ok())
        .map(|v| v.answers)
        .unwrap_or_default();
    Ok(filter_fabricated(
        answers,
        evidence,
        question,
        ctx.mid_pattern,
    ))
}

/// Decides whether the evidence answers the question and, if so, extracts
/// the answers. Two calls on a positive verdict, one on a negative one; the
/// fused variant always makes one.
pub fn generate(
    ctx: &QuestionContext<'_>,
    question: &str,
    evidence: &[AbstractedTriplet],
    fused: bool,
) -> Result<GeneratorVerdict, PipelineError> {
    if fused {
        let prompt = render(&ctx.prompts.fused_generator, question, evidence)?;
        let Some(reply) = ask(ctx, ModuleTag::AnswerExtraction, &prompt)? else {
            return Ok(GeneratorVerdict::insufficient());
        };
        let Ok(mut verdict) = parse_verdict(&reply, Stage::Answer) else {
            return Ok(GeneratorVerdict::insufficient());
        };
        verdict.answers = filter_fabricated(verdict.answers, evidence, question, ctx.mid_pattern);
        if verdict.answers.is_empty() {
            verdict.flag = Flag::Insufficient;
        }
        return Ok(verdict);
    }

    let prompt = render(&ctx.prompts.sufficiency, question, evidence)?;
    let mut verdict = None;
    for attempt in [prompt.clone(), format!("{prompt}{VERDICT_REMINDER}")] {
        if let Some(reply) = ask(ctx, ModuleTag::Sufficiency, &attempt)? {
            if let Ok(v) = parse_verdict(&reply, Stage::Sufficiency) {
                verdict = Some(v);
                break;
            }
        }
    }
    let Some(mut verdict) = verdict else {
        warn!("generator: unparseable sufficiency reply, treating as insufficient");
        return Ok(GeneratorVerdict::insufficient());
    };
    if !verdict.is_sufficient() {
        return Ok(verdict);
    }
    verdict.answers = extract(ctx, question, evidence)?;
    if verdict.answers.is_empty() {
        verdict.flag = Flag::Insufficient;
    }
    Ok(verdict)
}

/// Extraction without the sufficiency gate, used once the depth budget is
/// spent.
pub fn force_answer(
    ctx: &QuestionContext<'_>,
    question: &str,
    evidence: &[AbstractedTriplet],
) -> Result<Vec<String>, PipelineError> {
    extract(ctx, question, evidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Mid, Relation};
    use crate::relation::AbstractedEntity;

    #[test]
    fn sufficiency_replies() {
        let v = parse_verdict("A: {Yes}. Because...", Stage::Sufficiency).unwrap();
        assert_eq!(v.flag, Flag::Sufficient);
        assert_eq!(v.explanation, "Because...");
        let v = parse_verdict(
            "A: {No}. The retrieved knowledge graph triplet",
            Stage::Sufficiency,
        )
        .unwrap();
        assert_eq!(v.flag, Flag::Insufficient);
        assert_eq!(
            parse_verdict("{maybe}", Stage::Sufficiency),
            Err(VerdictParseError::NotYesNo("maybe".into()))
        );
        assert_eq!(
            parse_verdict("nothing", Stage::Sufficiency),
            Err(VerdictParseError::NoBraceGroup)
        );
    }

    #[test]
    fn answer_lists() {
        let v = parse_verdict("{m.1 (person); m.2 (person)}", Stage::Answer).unwrap();
        assert_eq!(v.answers, ["m.1 (person)", "m.2 (person)"]);
        let v = parse_verdict(
            "A: {m.0wfjc51 (place)}. The artist nominated",
            Stage::Answer,
        )
        .unwrap();
        assert_eq!(v.answers, ["m.0wfjc51 (place)"]);
        assert_eq!(v.flag, Flag::Sufficient);
        let v = parse_verdict("{No}", Stage::Answer).unwrap();
        assert_eq!(v.flag, Flag::Insufficient);
        let v = parse_verdict("{ }", Stage::Answer).unwrap();
        assert_eq!(v.flag, Flag::Insufficient);
    }

    fn triplet(h: &str, r: &str, t: &str, concept: &str) -> AbstractedTriplet {
        AbstractedTriplet {
            head: AbstractedEntity {
                mid: Mid::new(h).unwrap(),
                surface: Some("The Long Winter".into()),
                concepts: vec![],
            },
            relation: Relation::new(r).unwrap(),
            tail: AbstractedEntity {
                mid: Mid::new(t).unwrap(),
                surface: None,
                concepts: vec![concept.into()],
            },
        }
    }

    #[test]
    fn fabricated_identifiers_are_dropped() {
        let evidence = vec![triplet(
            "m.a",
            "book.written_work.author",
            "m.0bvl_7",
            "person",
        )];
        let kept = filter_fabricated(
            vec![
                "m.0bvl_7 (person)".into(),
                "m.999 (person)".into(),
                "The Long Winter".into(),
                "Paris".into(),
            ],
            &evidence,
            "who wrote it?",
            &MidPattern::default(),
        );
        assert_eq!(kept, ["m.0bvl_7 (person)", "The Long Winter"]);
    }

    #[test]
    fn evidence_rendering() {
        let evidence = vec![triplet(
            "m.a",
            "book.written_work.author",
            "m.0bvl_7",
            "person",
        )];
        assert_eq!(
            render_evidence(&evidence),
            "The Long Winter, book.written_work.author, m.0bvl_7 (person)"
        );
    }
}
